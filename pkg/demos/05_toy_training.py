"""
A short training run
====================

Two hundred steps on the synthetic set at 64x64 take a few minutes on one
CPU core. The loss log and checkpoints land in ``demo_output/run``.
Pass ``--steps`` for a quicker look.
"""

import argparse
from pathlib import Path

import numpy as np

from attncut.data_io import load_unpaired_dataset, split_dirs, write_toy_dataset
from attncut.trainer import TrainConfig, read_loss_csv, train

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=200)
args = parser.parse_args()

out = Path("demo_output")
root = write_toy_dataset(out / "toy200", n_train=200, n_test=64)
ds = load_unpaired_dataset(*split_dirs(root), image_size=64, seed=0)

# %%
# The full-size recipe at toy size: both PatchNCE terms weighted 1.
cfg = TrainConfig(image_size=64, epochs=1, max_steps=args.steps, attention="self").with_preset("lambda_1_1")
train(cfg, ds, out / "run")

# %%
# The objective falls quickly once the discriminator settles.
rows = read_loss_csv(out / "run" / "losses.csv")
total = np.array([r["total_g"] for r in rows])
w = min(50, len(total) // 2)
print(f"total_g mean over first {w} steps: {total[:w].mean():.3f}")
print(f"total_g mean over last {w} steps : {total[-w:].mean():.3f}")
print("then: attncut plot demo_output/run")
