"""Spatial-redundancy sub-image sampling with replayable patterns.

Each image is tiled into 2x2 blocks with positions numbered row-major::

    0 1
    2 3

Per block one pixel ``p1`` is drawn, and its two 4-neighbours inside the block
become ``p2`` and ``p3`` in random order.  The diagonal partner of ``p1`` is
never used.  Storing the draw as a :class:`SamplePattern` lets the exact same
pixel positions be read from a second image (the denoised full-resolution
output in the scale-replay loss).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .tensor_io import Rng, as_image

# NEIGHBOURS[p1] = the two positions 4-adjacent to p1 inside a 2x2 block
NEIGHBOURS = np.array([[1, 2], [0, 3], [0, 3], [1, 2]], dtype=np.int64)


@dataclass(frozen=True)
class SamplePattern:
    p1: np.ndarray    # (bh, bw) ints in 0..3
    swap: np.ndarray  # (bh, bw) bools; False -> p2 = NEIGHBOURS[p1][0]

    @property
    def bh(self) -> int:
        return self.p1.shape[0]

    @property
    def bw(self) -> int:
        return self.p1.shape[1]

    def positions(self) -> np.ndarray:
        """Block positions of p1, p2, p3 as an array of shape (3, bh, bw)."""
        s = self.swap.astype(np.int64)
        p2 = NEIGHBOURS[self.p1, s]
        p3 = NEIGHBOURS[self.p1, 1 - s]
        return np.stack([self.p1, p2, p3])

    def pixel_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Full-image (row, col) of every selected pixel, each (3, bh, bw)."""
        pos = self.positions()
        bi, bj = np.meshgrid(np.arange(self.bh), np.arange(self.bw), indexing="ij")
        return 2 * bi + pos // 2, 2 * bj + pos % 2

    def flat_indices(self) -> np.ndarray:
        """Row-major indices into an ``h*w`` plane, shape (3, bh*bw)."""
        rows, cols = self.pixel_coords()
        return (rows * (2 * self.bw) + cols).reshape(3, -1)


def draw_pattern(h: int, w: int, rng: Rng) -> SamplePattern:
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise ValueError(f"sampling needs even dimensions >= 2, got {h}x{w}")
    bh, bw = h // 2, w // 2
    p1 = rng.integers(0, 4, size=(bh, bw)).astype(np.int64)
    swap = rng.integers(0, 2, size=(bh, bw)).astype(bool)
    return SamplePattern(p1, swap)


def apply_pattern(img, pattern: SamplePattern):
    """Return the three sub-images ``(m1, m2, m3)`` selected by ``pattern``."""
    img = as_image(img)
    h, w, _ = img.shape
    if (h, w) != (2 * pattern.bh, 2 * pattern.bw):
        raise ValueError(
            f"image {h}x{w} does not match pattern for {2 * pattern.bh}x{2 * pattern.bw}")
    rows, cols = pattern.pixel_coords()
    return tuple(img[rows[n], cols[n]] for n in range(3))


def srd_sample(img, rng: Rng):
    """Draw a pattern for ``img`` and apply it; returns ``(m1, m2, m3, pattern)``."""
    img = as_image(img)
    pattern = draw_pattern(img.shape[0], img.shape[1], rng)
    m1, m2, m3 = apply_pattern(img, pattern)
    return m1, m2, m3, pattern


def gather_subimages(x: torch.Tensor, patterns) -> torch.Tensor:
    """Batched torch version of :func:`apply_pattern`.

    ``x`` is ``(B, C, H, W)``; returns ``(3, B, C, H/2, W/2)``.  Differentiable
    in ``x``.
    """
    b, c, h, w = x.shape
    idx = np.stack([p.flat_indices() for p in patterns])  # (B, 3, bh*bw)
    if idx.shape[0] != b or patterns[0].bh * 2 != h or patterns[0].bw * 2 != w:
        raise ValueError("patterns do not match batch shape")
    idx_t = torch.as_tensor(idx, device=x.device)
    flat = x.reshape(b, c, h * w)
    out = torch.stack([
        torch.gather(flat, 2, idx_t[:, n][:, None, :].expand(b, c, -1))
        for n in range(3)
    ])
    return out.reshape(3, b, c, h // 2, w // 2)
