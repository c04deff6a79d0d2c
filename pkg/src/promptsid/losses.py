"""Training losses and the gradient-free scale-replay pass.

All squared-error norms are realised as mean squared error over every element
(batch included), so loss magnitudes do not depend on patch size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .sampling import gather_subimages
from .tensor_io import Rng


@dataclass(frozen=True)
class LossWeights:
    rec: float = 1.0
    sc: float = 1.5
    diff: float = 1.0

    def __post_init__(self):
        for name in ("rec", "sc", "diff"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class ReplayTerms:
    """Sub-sampled full-resolution output; constants with no autograd history."""

    m1fx: torch.Tensor
    m2fx: torch.Tensor
    m3fx: torch.Tensor


def _mse(v):
    return (v ** 2).mean()


def _check_shapes(*arrays):
    shapes = {tuple(a.shape) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def rec_loss(pred, m2, m3):
    _check_shapes(pred, m2, m3)
    return _mse(pred - m2) + _mse(pred - m3)


def sc_loss(pred, m2, m3, r: ReplayTerms):
    _check_shapes(pred, m2, m3, r.m1fx, r.m2fx, r.m3fx)
    return _mse(pred - r.m1fx - m2 + r.m2fx) + _mse(pred - r.m1fx - m3 + r.m3fx)


def total_loss(rec, sc, diff, w: LossWeights):
    return w.rec * rec + w.sc * sc + w.diff * diff


@torch.no_grad()
def scale_replay(model, x: torch.Tensor, patterns, rng: Rng) -> ReplayTerms:
    """Full inference on ``x`` then re-sampling with the training patterns.

    The diffusion start noise is drawn from ``rng`` (one row per image).
    """
    noise = torch.from_numpy(rng.normal(size=(x.shape[0], model.cfg.latent_dim))).to(x.dtype)
    fx = model.infer(x, noise)
    m1fx, m2fx, m3fx = gather_subimages(fx, patterns)
    return ReplayTerms(m1fx.detach().clone(), m2fx.detach().clone(), m3fx.detach().clone())
