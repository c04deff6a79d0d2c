"""Pixel structure encoder: residual conv stack, global pooling, two linears.

Maps an image of any (even) resolution to a length-N structural vector, so a
sub-image and its full-resolution source land in the same latent space.
"""
from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from .initializers import he_normal_
from .tensor_io import Rng


class ResBlock(nn.Module):
    def __init__(self, width: int, slope: float = 0.01):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.slope = slope

    def forward(self, x):
        return x + self.conv2(F.leaky_relu(self.conv1(x), self.slope))


class PixelStructureEncoder(nn.Module):
    def __init__(self, channels=3, width=64, blocks=4, hidden=256, latent=256, slope=0.01):
        super().__init__()
        self.channels = channels
        self.slope = slope
        self.stem = nn.Conv2d(channels, width, 3, padding=1)
        self.body = nn.Sequential(*[ResBlock(width, slope) for _ in range(blocks)])
        self.fc1 = nn.Linear(width, hidden)
        self.fc2 = nn.Linear(hidden, latent)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Spatial feature map right before pooling, ``(B, width, H, W)``."""
        if x.shape[1] != self.channels:
            raise ValueError(f"encoder expects {self.channels} channels, got {x.shape[1]}")
        return self.body(F.leaky_relu(self.stem(x), self.slope))

    def head(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.leaky_relu(self.fc1(pooled), self.slope))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).mean(dim=(2, 3)))


def pse_init(rng: Rng, channels=3, width=64, blocks=4, hidden=256, latent=256,
             dtype=torch.float32) -> PixelStructureEncoder:
    model = PixelStructureEncoder(channels, width, blocks, hidden, latent).to(dtype)
    return he_normal_(model, rng)
