"""
Random neighbour sub-sampling
=============================

Each 2x2 block of a noisy image gives one pixel to each of three
sub-images: a randomly placed first pixel and its two 4-neighbours.
"""

# %%
import numpy as np

from promptsid.cli import provenance_map
from promptsid.noise import NoiseSpec, apply_noise, synthetic_clean
from promptsid.sampling import apply_pattern, draw_pattern
from promptsid.tensor_io import Rng

rng = Rng(0)
clean = synthetic_clean(1, 16, 1, rng)[0]
noisy = apply_noise(clean, NoiseSpec.gaussian(25), rng)

# %%
# The pattern is drawn once and can be replayed on any image of the same size.
pattern = draw_pattern(16, 16, rng)
m1, m2, m3 = apply_pattern(noisy, pattern)
print("sub-image shape", m1.shape)
print("positions in the top-left block (0=tl 1=tr 2=bl 3=br):", pattern.positions()[:, 0, 0])

# %%
# Role of every pixel in the first two block rows: 0 = m1, 1 = m2, 2 = m3, 3 = unused
roles = provenance_map(pattern)[:4, :8]
print(np.argmax(np.concatenate([roles, roles.sum(-1, keepdims=True) == 0], -1), -1))

# %%
# Neighbouring noisy pixels see the same clean signal, so m2 and m3 work as
# noisy targets for m1.  Their difference is mostly noise:
print("std(m1 - m2) %.4f   expected about %.4f" % ((m1 - m2).std(), np.sqrt(2) * 25 / 255))
