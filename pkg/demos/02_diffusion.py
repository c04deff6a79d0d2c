"""
Latent diffusion over prompt vectors
====================================

A linear beta schedule, the closed-form forward jump, and the deterministic
reverse chain driven by a noise predictor.
"""

# %%
import numpy as np
import torch

from promptsid.diffusion import NoisePredictor, forward_diffuse, make_schedule, reverse_chain
from promptsid.initializers import he_normal_
from promptsid.tensor_io import Rng

sched = make_schedule(50, 1e-4, 0.02)
print("alpha_bar at t = 1, 25, 50:", sched.alpha_bars[[0, 24, 49]])

# %%
# Forward jump: c_t = sqrt(abar) c0 + sqrt(1 - abar) eps
rng = Rng(1)
c0 = rng.normal(size=8)
eps = rng.normal(size=8)
c_t = forward_diffuse(sched, c0, 30, eps)

# %%
# With a predictor that returns the true eps the chain runs deterministically.
# Each step only removes that step's share of the noise, so the result lands
# near c0 but is not an exact inverse of the jump.
class TrueNoise:
    def __call__(self, c, cond, t):
        return torch.from_numpy(eps)

back = reverse_chain(TrueNoise(), sched, torch.from_numpy(c_t), 30, None).numpy()
print("max |c_t - c0| %.3f   after the chain %.3f" % (np.abs(c_t - c0).max(), np.abs(back - c0).max()))

# %%
# A learned predictor is conditioned on a second vector (the sub-image prompt).
net = he_normal_(NoisePredictor(latent=8, hidden=32, time_dim=16).double(), Rng(2))
cond = torch.from_numpy(rng.normal(size=8))
out = reverse_chain(net, sched, torch.from_numpy(rng.normal(size=8)), sched.T, cond)
print("untrained prompt:", np.round(out.detach().numpy(), 3))
