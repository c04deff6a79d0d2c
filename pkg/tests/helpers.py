"""Shared tiny configurations for the test-suite."""
import numpy as np
import torch

from promptsid.model import ModelConfig
from promptsid.training import ModelState, TrainConfig

TINY = ModelConfig(channels=1, latent_dim=16, pse_width=8, pse_blocks=1, pse_hidden=16,
                   width=8, blocks=1, heads=2, steps=4, mlp_hidden=16, time_dim=8)


def tiny_state(seed=0, float64=True, model_cfg=TINY, **train):
    train.setdefault("patch_size", 8)
    train.setdefault("batch_size", 1)
    cfg = TrainConfig(seed=seed, float64=float64, **train)
    return ModelState.create(model_cfg, cfg)


def jitter(model, scale=0.1, seed=0):
    """Move every parameter off its initial value (zero-init branches included)."""
    g = np.random.default_rng(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.from_numpy(g.normal(0, scale, size=tuple(p.shape))).to(p.dtype))
    return model
