"""Prompt-conditioned transformer denoiser.

Each block runs: structural attention (prompt fusion) -> channel-wise
multi-head self-attention -> simple-gate feed-forward, with additive skips.
Every layer is convolutional or acts on pooled/vector quantities, so one set
of parameters serves both the half-resolution sub-images and the full image.
Tensors are ``(B, C, H, W)``.
"""
from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from .initializers import he_normal_
from .tensor_io import Rng


class ChannelNorm(nn.Module):
    """Layer norm across channels at every pixel, with learned affine."""

    def __init__(self, dim: int, eps: float = 1e-7):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def normalize(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mu) / torch.sqrt(var + self.eps)

    def forward(self, x):
        return self.normalize(x) * self.weight[:, None, None] + self.bias[:, None, None]


class StructuralAttention(nn.Module):
    """Fuse the structural prompt into a feature map.

    ``c_sca = W_l1 avgpool(F) + b_l1``, then
    ``out = (W_s1 c_sca)(W_c1 c) * Norm(F) + (W_s2 c_sca)(W_c2 c)``
    with the vector products broadcast over pixels.
    """

    def __init__(self, dim: int, latent: int):
        super().__init__()
        self.dim, self.latent = dim, latent
        self.l1 = nn.Conv2d(dim, dim, 1)
        self.s1 = nn.Linear(dim, dim, bias=False)
        self.s2 = nn.Linear(dim, dim, bias=False)
        self.c1 = nn.Linear(latent, dim, bias=False)
        self.c2 = nn.Linear(latent, dim, bias=False)
        self.norm = ChannelNorm(dim)

    def forward(self, feat: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        if feat.shape[1] != self.dim or prompt.shape[-1] != self.latent:
            raise ValueError(
                f"expected {self.dim} channels and prompt length {self.latent}, "
                f"got {feat.shape[1]} and {prompt.shape[-1]}")
        if prompt.dim() == 1:
            prompt = prompt.expand(feat.shape[0], -1)
        c_sca = self.l1(feat.mean(dim=(2, 3), keepdim=True))[:, :, 0, 0]
        scale = self.s1(c_sca) * self.c1(prompt)
        shift = self.s2(c_sca) * self.c2(prompt)
        return scale[:, :, None, None] * self.norm(feat) + shift[:, :, None, None]


class ChannelAttention(nn.Module):
    """Transposed attention: a (d/heads x d/heads) map per head over channels."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ValueError(f"heads ({heads}) must divide width ({dim})")
        self.dim, self.heads = dim, heads
        self.qkv = nn.Conv2d(dim, 3 * dim, 1)
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.proj = nn.Conv2d(dim, dim, 1)

    def attention_map(self, x):
        b, _, h, w = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=1)
        q, k, v = (z.reshape(b, self.heads, self.dim // self.heads, h * w) for z in (q, k, v))
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.temperature, dim=-1)
        return attn, v

    def forward(self, x):
        if x.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} channels, got {x.shape[1]}")
        b, _, h, w = x.shape
        attn, v = self.attention_map(x)
        return self.proj((attn @ v).reshape(b, self.dim, h, w))


class SimpleGate(nn.Module):
    """``conv2(u1 * u2)`` where ``(u1, u2)`` split ``conv1(Norm(x))`` along channels."""

    def __init__(self, dim: int, expansion: int):
        super().__init__()
        if expansion % 2:
            raise ValueError(f"expansion width must be even, got {expansion}")
        self.norm = ChannelNorm(dim)
        self.conv1 = nn.Conv2d(dim, expansion, 3, padding=1)
        self.conv2 = nn.Conv2d(expansion // 2, dim, 1)

    def forward(self, x):
        u1, u2 = self.conv1(self.norm(x)).chunk(2, dim=1)
        return self.conv2(u1 * u2)


class PromptBlock(nn.Module):
    def __init__(self, dim: int, latent: int, heads: int, gate: int):
        super().__init__()
        self.sam = StructuralAttention(dim, latent)
        self.attn = ChannelAttention(dim, heads)
        self.gate = SimpleGate(dim, 2 * gate)

    def forward(self, x, prompt):
        x = x + self.attn(self.sam(x, prompt))
        return x + self.gate(x)


class SPIformer(nn.Module):
    def __init__(self, channels=3, width=48, blocks=4, heads=2, latent=256, gate=None):
        super().__init__()
        self.channels = channels
        self.conv_in = nn.Conv2d(channels, width, 3, padding=1)
        self.blocks = nn.ModuleList(
            PromptBlock(width, latent, heads, gate or width) for _ in range(blocks))
        self.conv_out = nn.Conv2d(width, channels, 3, padding=1)

    def forward(self, img: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        if img.shape[1] != self.channels:
            raise ValueError(f"denoiser expects {self.channels} channels, got {img.shape[1]}")
        feat = self.conv_in(img)
        for block in self.blocks:
            feat = block(feat, prompt)
        return img + self.conv_out(feat)


def spiformer_init(rng: Rng, dtype=torch.float32, **kwargs) -> SPIformer:
    return he_normal_(SPIformer(**kwargs).to(dtype), rng)
