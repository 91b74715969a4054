"""
The synthetic two-domain set
============================

Domain X holds bright shapes on a dark background. Domain Y is the same kind
of scene after a fixed colour rotation and inversion. Nothing pairs the two
folders, so a model has to learn the shift from the marginals alone.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from attncut.data_io import load_unpaired_dataset, make_toy_images, split_dirs, write_toy_dataset

out = Path("demo_output")
out.mkdir(exist_ok=True)

# %%
# A handful of scenes from each domain, drawn from the same seed.
xs = make_toy_images(4, 64, seed=0, domain="x")
ys = make_toy_images(4, 64, seed=0, domain="y")

fig, axes = plt.subplots(2, 4, figsize=(8, 4))
for i in range(4):
    axes[0, i].imshow(xs[i])
    axes[1, i].imshow(ys[i])
    axes[0, i].axis("off")
    axes[1, i].axis("off")
axes[0, 0].set_title("X", loc="left")
axes[1, 0].set_title("Y", loc="left")
fig.savefig(out / "toy_domains.png", dpi=100)

# %%
# On disk the set is four PNG folders. The loader pairs X and Y by
# independent permutations, so epoch order is reproducible from the seed.
root = write_toy_dataset(out / "toy", n_train=20, n_test=8)
ds = load_unpaired_dataset(*split_dirs(root), image_size=64, seed=0)
print("steps per epoch:", ds.steps_per_epoch(1))
print("first pairs of epoch 0:", ds.epoch_order(0)[:3])
x, y = next(iter(ds.batches(epoch=0, batch_size=4)))
print("batch:", tuple(x.shape), "range", float(x.min()), float(x.max()))
