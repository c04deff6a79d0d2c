"""Parameter initialisation driven by :class:`~promptsid.tensor_io.Rng`."""
from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .tensor_io import Rng


@torch.no_grad()
def he_normal_(module: nn.Module, rng: Rng) -> nn.Module:
    """Fan-in scaled normal weights (std sqrt(2/fan_in)), zero biases.

    Only ``nn.Conv2d`` and ``nn.Linear`` are touched; draws happen in
    ``named_modules`` order so equal seeds give bit-identical parameters.
    """
    for _, m in module.named_modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            w = m.weight
            fan_in = w.shape[1] * (int(np.prod(w.shape[2:])) if w.dim() > 2 else 1)
            std = math.sqrt(2.0 / fan_in)
            w.copy_(torch.from_numpy(rng.normal(0.0, std, size=tuple(w.shape))).to(w.dtype))
            if m.bias is not None:
                m.bias.zero_()
    return module


@torch.no_grad()
def zero_(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.zero_()
    return module
