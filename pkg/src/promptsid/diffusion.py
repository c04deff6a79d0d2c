"""Latent diffusion over the structural vector.

Steps are 1-based throughout: ``t`` runs from 1 to ``T``.  The reverse update
is the deterministic form

    c_{t-1} = (c_t - eps_hat * (1 - alpha_t) / sqrt(1 - alpha_bar_t)) / sqrt(alpha_t)

with no added sampling noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray  # float64, index t-1

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("betas must be a non-empty vector")
        if np.any(b < 0) or np.any(b >= 1):
            raise ValueError("betas must lie in [0, 1)")
        object.__setattr__(self, "betas", b)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        out = np.empty_like(self.betas)
        acc = 1.0
        for i, a in enumerate(self.alphas):
            acc = acc * a
            out[i] = acc
        return out

    def check_step(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"step out of range 1..{self.T}: {t}")
        return t


def make_schedule(T: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    """Betas increasing linearly from ``beta_start`` to ``beta_end``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if T == 1:
        return DiffusionSchedule(np.array([beta_start], dtype=np.float64))
    k = np.arange(T, dtype=np.float64)
    return DiffusionSchedule(beta_start + k / (T - 1) * (beta_end - beta_start))


def _coef(values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    """Per-sample coefficient broadcastable against ``like`` (B, N) or (N,)."""
    v = torch.as_tensor(values[np.asarray(t) - 1], dtype=like.dtype, device=like.device)
    if v.dim() == 1 and like.dim() > 1:
        v = v[:, None]
    return v


def forward_diffuse(sched: DiffusionSchedule, c0, t, eps):
    """Sample of q(c_t | c_0) given the unit-normal draw ``eps``."""
    t = sched.check_step(t)
    ab = sched.alpha_bars
    if isinstance(c0, torch.Tensor):
        return _coef(np.sqrt(ab), t, c0) * c0 + _coef(np.sqrt(1.0 - ab), t, c0) * eps
    a = np.sqrt(ab[t - 1])
    s = np.sqrt(1.0 - ab[t - 1])
    if np.ndim(t):
        a, s = a[:, None], s[:, None]
    return a * np.asarray(c0) + s * np.asarray(eps)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal encoding; frequencies geometric from 1 down to 1e-4."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class NoisePredictor(nn.Module):
    """MLP on ``concat(c_t, c_cond, time_embedding)`` predicting the noise."""

    def __init__(self, latent=256, hidden=512, time_dim=64):
        super().__init__()
        self.latent = latent
        self.time_dim = time_dim
        self.fc1 = nn.Linear(2 * latent + time_dim, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, latent)

    def forward(self, c_t: torch.Tensor, c_cond: torch.Tensor, t) -> torch.Tensor:
        if c_t.shape[-1] != self.latent or c_cond.shape[-1] != self.latent:
            raise ValueError(
                f"latent length mismatch: expected {self.latent}, got {c_t.shape[-1]} and {c_cond.shape[-1]}")
        squeeze = c_t.dim() == 1
        if squeeze:
            c_t, c_cond = c_t[None], c_cond[None]
        t = torch.as_tensor(np.broadcast_to(np.asarray(t), (c_t.shape[0],)).copy())
        temb = timestep_embedding(t, self.time_dim).to(c_t.dtype)
        h = F.silu(self.fc1(torch.cat([c_t, c_cond, temb], dim=-1)))
        h = F.silu(self.fc2(h))
        out = self.fc3(h)
        return out[0] if squeeze else out


def reverse_step(model, sched: DiffusionSchedule, c_t, c_cond, t):
    t = sched.check_step(t)
    alphas, ab = sched.alphas, sched.alpha_bars
    one_minus_ab = 1.0 - ab
    # alpha_t == 1 with alpha_bar_t == 1 only happens on degenerate test schedules
    scale = np.divide(1.0 - alphas, np.sqrt(one_minus_ab),
                      out=np.zeros_like(alphas), where=one_minus_ab > 0)
    eps_hat = model(c_t, c_cond, t)
    return (c_t - eps_hat * _coef(scale, t, c_t)) * _coef(1.0 / np.sqrt(alphas), t, c_t)


def reverse_chain(model, sched: DiffusionSchedule, start, start_t, c_cond):
    """Fold :func:`reverse_step` from ``start_t`` down to 1 and return c_0.

    ``start_t`` may be an int or one step per batch row; rows whose start lies
    below the current step pass through unchanged.
    """
    start_t = sched.check_step(start_t)
    c = start
    if start_t.ndim == 0:
        for s in range(int(start_t), 0, -1):
            c = reverse_step(model, sched, c, c_cond, s)
        return c
    active_t = torch.as_tensor(start_t)
    for s in range(int(start_t.max()), 0, -1):
        stepped = reverse_step(model, sched, c, c_cond, np.full(start_t.shape, s))
        c = torch.where((active_t >= s)[:, None], stepped, c)
    return c


def diff_loss(c_hat, c0):
    """Mean absolute difference between generated and encoded vectors."""
    if c_hat.shape != c0.shape:
        raise ValueError(f"shape mismatch {tuple(c_hat.shape)} vs {tuple(c0.shape)}")
    if isinstance(c_hat, torch.Tensor):
        return (c_hat - c0).abs().mean()
    return float(np.mean(np.abs(np.asarray(c_hat) - np.asarray(c0))))
