"""PSNR / SSIM and directory-level evaluation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .tensor_io import as_image, load_image

IMAGE_SUFFIXES = (".png", ".psid")


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical inputs give ``inf``."""
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    k = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(k ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim(a, b, peak: float = 1.0, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM with a Gaussian window, averaged over channels.

    Only windows lying fully inside the image contribute.
    """
    a, b = as_image(a).astype(np.float64), as_image(b).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < window:
        raise ValueError(f"image {a.shape[:2]} smaller than the {window}x{window} SSIM window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = gaussian_window(window, sigma)
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mu_x * mu_x
        syy = _filter_valid(y * y, g) - mu_y * mu_y
        sxy = _filter_valid(x * y, g) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass
class MetricReport:
    names: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.names)

    @property
    def mean_psnr(self) -> float:
        # averaged in dB; any identical pair makes the mean inf
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "psnr", "ssim"])
        for n, p, s in zip(self.names, self.psnr, self.ssim):
            w.writerow([n, _fmt(p), repr(s)])
        w.writerow(["MEAN", _fmt(self.mean_psnr), repr(self.mean_ssim)])
        return buf.getvalue()

    def summary(self) -> str:
        width = max([len(n) for n in self.names] + [5])
        lines = [f"{'image':<{width}}  {'PSNR(dB)':>9}  {'SSIM':>6}"]
        for n, p, s in zip(self.names, self.psnr, self.ssim):
            lines.append(f"{n:<{width}}  {_fmt_short(p):>9}  {s:6.4f}")
        lines.append(f"{'mean':<{width}}  {_fmt_short(self.mean_psnr):>9}  {self.mean_ssim:6.4f}"
                     f"  ({self.count} images)")
        return "\n".join(lines)


def _fmt(p: float) -> str:
    return "identical" if math.isinf(p) else repr(p)


def _fmt_short(p: float) -> str:
    return "identical" if math.isinf(p) else f"{p:.2f}"


def evaluate_dir(denoised_dir, reference_dir, peak: float = 1.0) -> MetricReport:
    """Score every reference image against the same-named file in ``denoised_dir``."""
    denoised_dir, reference_dir = Path(denoised_dir), Path(reference_dir)
    refs = sorted(p for p in reference_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not refs:
        raise FileNotFoundError(f"no images in {reference_dir}")
    missing = [p.name for p in refs if not (denoised_dir / p.name).exists()]
    if missing:
        raise FileNotFoundError(f"no denoised counterpart for: {', '.join(missing)}")
    report = MetricReport()
    for ref in refs:
        a = load_image(denoised_dir / ref.name)
        b = load_image(ref)
        report.names.append(ref.name)
        report.psnr.append(psnr(a, b, peak))
        report.ssim.append(ssim(a, b, peak))
    return report
