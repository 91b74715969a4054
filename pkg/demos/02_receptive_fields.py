"""
Where the encoder looks
=======================

PatchNCE compares features at five depths of the generator. Each depth sees
an input window of a different size, from a single pixel up to 99x99. Here we
compute those windows analytically and then measure them from gradients.
"""

import torch

from attncut.generator import GeneratorConfig, build_generator, measure_receptive_field, receptive_field, tap_stride

cfg = GeneratorConfig()
gen = build_generator(cfg, seed=0)
print(f"generator parameters: {sum(p.numel() for p in gen.parameters()):,}")

# %%
# Analytic windows come from composing kernel sizes and strides.
for tap in cfg.tap_layers:
    print(f"{tap:>9}: field {receptive_field(tap):3d}  stride {tap_stride(tap)}")

# %%
# The measured window is the support of the input gradient of one centre
# feature, with instance-norm statistics held fixed so that distant pixels
# cannot leak in through the normalisation.
for tap in cfg.tap_layers:
    print(f"{tap:>9}: measured {measure_receptive_field(gen, tap, image_size=128)}")

# %%
# Feature stack shapes for a 64x64 input.
with torch.no_grad():
    for tap, f in zip(cfg.tap_layers, gen.encode(torch.zeros(1, 3, 64, 64))):
        print(f"{tap:>9}: {tuple(f.shape)}")
