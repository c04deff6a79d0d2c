"""Synthetic corruption and toy clean-image generation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_io import Rng, as_image

KINDS = ("gaussian_fixed", "gaussian_range", "poisson_fixed", "poisson_range")


@dataclass(frozen=True)
class NoiseSpec:
    """Noise setting.  ``low``/``high`` are sigma (0-255 scale) or lambda.

    Fixed kinds use ``low`` only.
    """

    kind: str
    low: float
    high: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        hi = self.low if self.high is None else self.high
        if self.kind.startswith("gaussian") and self.low < 0:
            raise ValueError("sigma must be >= 0")
        if self.kind.startswith("poisson") and self.low <= 0:
            raise ValueError("lambda must be > 0")
        if self.kind.endswith("_range") and self.low > hi:
            raise ValueError(f"range min {self.low} exceeds max {hi}")

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseSpec":
        return cls("gaussian_fixed", sigma)

    @classmethod
    def gaussian_range(cls, lo: float, hi: float) -> "NoiseSpec":
        return cls("gaussian_range", lo, hi)

    @classmethod
    def poisson(cls, lam: float) -> "NoiseSpec":
        return cls("poisson_fixed", lam)

    @classmethod
    def poisson_range(cls, lo: float, hi: float) -> "NoiseSpec":
        return cls("poisson_range", lo, hi)

    def draw_level(self, rng: Rng) -> float:
        if self.kind.endswith("_fixed"):
            return float(self.low)
        return float(rng.uniform(self.low, self.high))


def apply_noise(clean, spec: NoiseSpec, rng: Rng) -> np.ndarray:
    """Corrupt ``clean`` (values in [0, 1]).  The result is not clamped.

    Gaussian: ``y = x + N(0, (sigma/255)^2)``.  Poisson: ``y = Poisson(lam*x)/lam``.
    Range kinds draw one level per image.
    """
    x = as_image(clean).astype(np.float64)
    if x.min() < 0 or x.max() > 1:
        raise ValueError("clean image values must lie in [0, 1]")
    level = spec.draw_level(rng)
    if spec.kind.startswith("gaussian"):
        if level == 0:
            return x.copy()
        return x + rng.normal(0.0, level / 255.0, size=x.shape)
    return rng.poisson(level * x).astype(np.float64) / level


def synthetic_clean(n: int, size: int, channels: int, rng: Rng) -> list[np.ndarray]:
    """Piecewise-smooth toy scenes: a colour gradient with disks and boxes on top."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    out = []
    for _ in range(n):
        a, b = rng.uniform(-0.5, 0.5, size=(2, channels))
        base = rng.uniform(0.2, 0.8, size=channels)
        img = base + a * yy[..., None] + b * xx[..., None]
        for _ in range(int(rng.integers(3, 7))):
            color = rng.uniform(0.0, 1.0, size=channels)
            if rng.uniform() < 0.5:
                cy, cx = rng.uniform(0, size, size=2)
                r = rng.uniform(size / 10, size / 3)
                mask = (np.mgrid[0:size, 0:size][0] - cy) ** 2 + (np.mgrid[0:size, 0:size][1] - cx) ** 2 < r * r
            else:
                y0, x0 = rng.integers(0, size - 4, size=2)
                hh, ww = rng.integers(4, size // 2 + 1, size=2)
                mask = np.zeros((size, size), dtype=bool)
                mask[y0:y0 + hh, x0:x0 + ww] = True
            img[mask] = color
        out.append(np.clip(img, 0.0, 1.0))
    return out
