"""
The contrastive loss in numbers
===============================

InfoNCE is a softmax cross-entropy where the positive is the only correct
class. Two reference cases pin its scale.
"""

import math

import torch

from attncut.attention import AttentionConfig, PatchSampler
from attncut.contrastive import build_heads, info_nce, patch_nce_loss
from attncut.generator import GeneratorConfig, build_generator

# %%
# If every logit is equal the loss is ln(N + 1).
v = torch.nn.functional.normalize(torch.randn(64, dtype=torch.float64), dim=0)
print(info_nce(v, v, v.repeat(255, 1)).item(), math.log(256))

# %%
# A matched positive with orthogonal negatives is nearly free at tau = 0.07.
e = torch.eye(2, dtype=torch.float64)
print(info_nce(e[0], e[0], e[1].repeat(255, 1)).item())

# %%
# The patch loss for an untrained generator. An identical pair of images
# gives a loss well below the uniform baseline ln(k).
cfg = GeneratorConfig(base_channels=16)
gen = build_generator(cfg, seed=0)
chans = [cfg.tap_channels(t) for t in cfg.tap_layers]
heads = build_heads(chans, dim=64, seed=1)
sampler = PatchSampler(chans, AttentionConfig(kind="self"), k=32, seed=2)
x = torch.rand(1, 3, 64, 64) * 2 - 1
with torch.no_grad():
    print("same image  :", patch_nce_loss(gen, heads, sampler, x, x).item())
    print("other image :", patch_nce_loss(gen, heads, sampler, x, torch.rand_like(x) * 2 - 1).item())
    print("uniform ln k:", math.log(32))
