"""
The prompted denoiser
=====================

Build the full model, check that it starts as the identity, and see the
prompt reach the output once the residual branches open.
"""

# %%
import numpy as np
import torch

from promptsid.model import ModelConfig, build_model
from promptsid.noise import synthetic_clean
from promptsid.tensor_io import Rng

cfg = ModelConfig(latent_dim=32, width=16, blocks=2, steps=20, pse_width=16, pse_blocks=2,
                  pse_hidden=32, mlp_hidden=64, time_dim=16)
model = build_model(cfg, Rng(0), torch.float64)
print(sum(p.numel() for p in model.parameters()), "parameters")

# %%
img = synthetic_clean(1, 32, 3, Rng(1))[0]
out = model.denoise(img, Rng(2))
print("fresh model is the identity:", np.array_equal(out, img))

# %%
# Open the branches a little and compare two prompts on the same image.
with torch.no_grad():
    for p in model.spiformer.parameters():
        p.add_(0.05 * torch.randn_like(p))
a = model.denoise(img, Rng(3))
b = model.denoise(img, Rng(4))
print("output change from a different diffusion start: %.2e" % np.abs(a - b).max())
