"""PatchGAN discriminator producing a map of raw per-patch scores."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .layers import InstanceNorm, init_gaussian, seeded


@dataclass(frozen=True)
class DiscriminatorConfig:
    n_layers: int = 3
    base_channels: int = 64
    norm: str = "instance"

    def __post_init__(self):
        if self.norm != "instance":
            raise ValueError(f"unsupported norm {self.norm!r}; only 'instance' is available")
        if self.n_layers < 1 or self.base_channels < 1:
            raise ValueError("n_layers and base_channels must be positive")


class Discriminator(nn.Module):
    """Stride-2 4x4 convs with LeakyReLU(0.2); instance norm from the second
    block on; a final 1-channel conv without sigmoid (scores feed a
    least-squares loss)."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        layers: list[nn.Module] = [nn.Conv2d(3, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        mult = 1
        for n in range(1, cfg.n_layers):
            prev, mult = mult, min(2**n, 8)
            layers += [
                nn.Conv2d(c * prev, c * mult, 4, stride=2, padding=1),
                InstanceNorm(c * mult),
                nn.LeakyReLU(0.2),
            ]
        prev, mult = mult, min(2**cfg.n_layers, 8)
        layers += [
            nn.Conv2d(c * prev, c * mult, 4, stride=1, padding=1),
            InstanceNorm(c * mult),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c * mult, 1, 4, stride=1, padding=1),
        ]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


def build_discriminator(cfg: DiscriminatorConfig | None = None, seed: int = 0) -> Discriminator:
    cfg = cfg or DiscriminatorConfig()
    with seeded(seed):
        disc = Discriminator(cfg)
        init_gaussian(disc, 0.02)
    return disc


def score_map_size(size: int, cfg: DiscriminatorConfig | None = None) -> int:
    """Edge length of the score map for a square input of edge ``size``."""
    cfg = cfg or DiscriminatorConfig()
    for _ in range(cfg.n_layers):
        size = (size + 2 - 4) // 2 + 1
    for _ in range(2):
        size = size + 2 - 4 + 1
    return size


def patch_receptive_field(cfg: DiscriminatorConfig | None = None) -> int:
    cfg = cfg or DiscriminatorConfig()
    rf, jump = 1, 1
    for stride in [2] * cfg.n_layers + [1, 1]:
        rf += 3 * jump
        jump *= stride
    return rf


def discriminate(disc: Discriminator, img: torch.Tensor) -> torch.Tensor:
    """B x 1 x N x N map of unbounded scores."""
    if img.ndim != 4 or img.shape[1] != 3:
        raise ValueError(f"expected a B x 3 x H x W batch, got shape {tuple(img.shape)}")
    if score_map_size(min(img.shape[-2:]), disc.cfg) < 1:
        raise ValueError(f"input {tuple(img.shape[-2:])} too small for the discriminator")
    return disc(img)
