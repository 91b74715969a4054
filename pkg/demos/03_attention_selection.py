"""
Choosing patches by significance
================================

Every attention mechanism turns a feature map into one score per location.
The top-k locations become the anchors of the contrastive loss. We compare
what the five mechanisms pick on the same toy scene.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from attncut.attention import KINDS, compute_significance, select_patches
from attncut.data_io import make_toy_images, to_tensor
from attncut.generator import build_generator

out = Path("demo_output")
out.mkdir(exist_ok=True)

gen = build_generator(seed=0)
x = to_tensor(make_toy_images(1, 64, seed=3, domain="x")[0])[None]
with torch.no_grad():
    feat = gen.encode(x, ("down2",))[0]
print("down2 features:", tuple(feat.shape))

# %%
# Scores and the 16 chosen locations for each mechanism.
fig, axes = plt.subplots(1, len(KINDS) + 1, figsize=(3 * (len(KINDS) + 1), 3))
axes[0].imshow((x[0].permute(1, 2, 0) + 1) / 2)
axes[0].set_title("input")
h, w = feat.shape[-2:]
for ax, kind in zip(axes[1:], KINDS):
    with torch.no_grad():
        s = compute_significance(feat, kind, seed=0)
    chosen = select_patches(s, 16).indices[0][0]
    ax.imshow(s[0].reshape(h, w))
    ax.scatter(chosen % w, chosen // w, s=12, c="red")
    ax.set_title(kind)
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig(out / "significance.png", dpi=100)

# %%
# Ties go to the lower index, and only the order of the scores matters.
print(select_patches(torch.tensor([0.1, 0.9, 0.9, 0.2]), 2).indices[0].tolist())
s = torch.rand(20)
print(torch.equal(select_patches(s, 5).indices[0], select_patches(s.exp(), 5).indices[0]))
