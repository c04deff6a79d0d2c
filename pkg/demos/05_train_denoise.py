"""
Train on noisy images only, then denoise
========================================

A small run on synthetic data.  Set STEPS to 5000 for the full desk-scale
experiment (roughly a minute per 1000 steps on one CPU thread).
"""

# %%
import os
import time

import numpy as np
import torch

from promptsid.losses import LossWeights
from promptsid.metrics import psnr, ssim
from promptsid.model import ModelConfig
from promptsid.noise import NoiseSpec, apply_noise, synthetic_clean
from promptsid.tensor_io import Rng
from promptsid.training import ModelState, TrainConfig, train

torch.set_num_threads(1)
STEPS = int(os.environ.get("STEPS", 600))

rng = Rng(0)
clean = synthetic_clean(25, 64, 3, rng)
noisy = [apply_noise(c, NoiseSpec.gaussian(25), rng) for c in clean]

# %%
cfg = ModelConfig(latent_dim=64, width=16, blocks=2, steps=50, pse_width=16, pse_blocks=2,
                  pse_hidden=64, mlp_hidden=128, time_dim=32)
state = ModelState.create(cfg, TrainConfig(lr=1e-3, total_steps=STEPS, batch_size=4, patch_size=32,
                                           weights=LossWeights(1.0, 1.5, 1.0)))
t0 = time.time()
records = train(state, noisy[:20])
print("%d steps in %.0fs, last total loss %.4f" % (STEPS, time.time() - t0, records[-1]["total"]))

# %%
# Held-out images never seen during training, denoised with the EMA weights.
model = state.ema_model()
er = Rng(5)
den = [model.denoise(n, er) for n in noisy[20:]]
print("noisy    PSNR %.2f dB" % np.mean([psnr(n, c) for n, c in zip(noisy[20:], clean[20:])]))
print("denoised PSNR %.2f dB  SSIM %.3f" % (np.mean([psnr(d, c) for d, c in zip(den, clean[20:])]),
                                            np.mean([ssim(d, c) for d, c in zip(den, clean[20:])])))
