"""
FID, IS and SWD on known distributions
======================================

All three metrics run on embeddings. On Gaussians we know the answers, which
makes them easy to sanity-check before trusting them on images.
"""

import numpy as np
import torch

from attncut.metrics import evaluate, fid, inception_score, swd

rng = np.random.default_rng(0)

# %%
# FID between two Gaussians that differ only in the mean is the squared shift.
m = np.array([1.0, -0.5, 0.25, 2.0])
a = rng.standard_normal((10_000, 4))
b = rng.standard_normal((10_000, 4)) + m
print(f"FID {fid(a, b):.3f} vs |m|^2 = {m @ m:.3f}")

# %%
# IS runs from 1 (every image looks alike) to C (confident and evenly spread).
print(inception_score(np.tile([0.2, 0.3, 0.5], (8, 1)))[0], inception_score(np.eye(4)[np.arange(8) % 4])[0])

# %%
# SWD shrinks as one set is pulled towards the other.
for t in (0.0, 0.5, 1.0):
    print(f"t={t}: SWD {swd(a[:500], (1 - t) * b[:500] + t * a[:500], seed=0):.4f}")

# %%
# On images, the toy embedder stands in for Inception.
real = torch.rand(32, 3, 64, 64) * 2 - 1
print(evaluate(real, real.flip(-1)).to_json())
