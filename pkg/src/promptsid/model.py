"""The full pipeline: encoder, latent diffusion branch and denoiser."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .diffusion import DiffusionSchedule, NoisePredictor, make_schedule, reverse_chain
from .initializers import he_normal_, zero_
from .pse import PixelStructureEncoder
from .spiformer import SPIformer
from .tensor_io import Rng, as_image


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 3
    latent_dim: int = 256      # N
    pse_width: int = 64
    pse_blocks: int = 4
    pse_hidden: int = 256
    width: int = 48            # d
    blocks: int = 4            # B
    heads: int = 2
    gate_width: int = 0        # 0 -> same as width
    steps: int = 100           # T
    beta_start: float = 1e-4
    beta_end: float = 0.02
    mlp_hidden: int = 512
    time_dim: int = 64

    def to_dict(self) -> dict:
        return asdict(self)


class PromptSID(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.pse = PixelStructureEncoder(cfg.channels, cfg.pse_width, cfg.pse_blocks,
                                         cfg.pse_hidden, cfg.latent_dim)
        self.denoiser = NoisePredictor(cfg.latent_dim, cfg.mlp_hidden, cfg.time_dim)
        self.spiformer = SPIformer(cfg.channels, cfg.width, cfg.blocks, cfg.heads,
                                   cfg.latent_dim, cfg.gate_width or None)
        self.schedule: DiffusionSchedule = make_schedule(cfg.steps, cfg.beta_start, cfg.beta_end)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def prompt(self, x: torch.Tensor, start_noise: torch.Tensor) -> torch.Tensor:
        """Inference prompt: encode ``x``, then run the whole reverse chain from ``start_noise``."""
        c_x = self.pse(x)
        return reverse_chain(self.denoiser, self.schedule, start_noise, self.schedule.T, c_x)

    def infer(self, x: torch.Tensor, start_noise: torch.Tensor) -> torch.Tensor:
        """Denoise full-resolution ``x`` (B, C, H, W)."""
        return self.spiformer(x, self.prompt(x, start_noise))

    @torch.no_grad()
    def denoise(self, img, rng: Rng) -> np.ndarray:
        """Denoise one ``(h, w, c)`` array; the diffusion start is drawn from ``rng``."""
        img = as_image(img)
        x = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)[None])).to(self.dtype)
        noise = torch.from_numpy(rng.normal(size=(1, self.cfg.latent_dim))).to(self.dtype)
        out = self.infer(x, noise)
        return out[0].permute(1, 2, 0).to(torch.float64).numpy()


def build_model(cfg: ModelConfig, rng: Rng, dtype=torch.float32) -> PromptSID:
    model = he_normal_(PromptSID(cfg).to(dtype), rng)
    # residual branches start closed, so the denoiser begins as the exact identity
    zero_(model.spiformer.conv_out)
    for block in model.spiformer.blocks:
        zero_(block.attn.proj)
        zero_(block.gate.conv2)
    return model
