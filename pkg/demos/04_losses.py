"""
Reconstruction, scale-consistency and the replay pass
=====================================================
"""

# %%
import numpy as np
import torch

from promptsid.losses import rec_loss, sc_loss, scale_replay
from promptsid.model import ModelConfig
from promptsid.noise import NoiseSpec, apply_noise, synthetic_clean
from promptsid.sampling import draw_pattern, gather_subimages
from promptsid.tensor_io import Rng
from promptsid.training import ModelState, TrainConfig

cfg = ModelConfig(channels=1, latent_dim=16, width=8, blocks=1, steps=10, pse_width=8,
                  pse_blocks=1, pse_hidden=16, mlp_hidden=32, time_dim=8)
state = ModelState.create(cfg, TrainConfig(float64=True, patch_size=16))
model = state.model

rng = Rng(0)
clean = synthetic_clean(2, 16, 1, rng)
x = torch.from_numpy(np.stack([apply_noise(c, NoiseSpec.gaussian(25), rng).transpose(2, 0, 1) for c in clean]))

# %%
# The replay pass denoises the full image without gradients and samples the
# result with the SAME patterns used for the training sub-images.
patterns = [draw_pattern(16, 16, rng) for _ in range(2)]
m1, m2, m3 = gather_subimages(x, patterns)
replay = scale_replay(model, x, patterns, rng)
print("replay carries no graph:", replay.m1fx.grad_fn is None)

# %%
# The untrained model is the identity, so the scale term cancels exactly while
# the reconstruction term sees the noise between neighbours.
with torch.no_grad():
    pred = model.spiformer(m1, torch.zeros(2, 16, dtype=torch.float64))
print("L_rec %.5f   L_sc %.1f" % (rec_loss(pred, m2, m3), sc_loss(pred, m2, m3, replay)))

# %%
# A fresh pattern for the replay breaks that cancellation.
other = scale_replay(model, x, [draw_pattern(16, 16, rng) for _ in range(2)], rng)
print("L_sc with a mismatched pattern %.5f" % sc_loss(pred, m2, m3, other))
