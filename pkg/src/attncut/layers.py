"""Building blocks shared by the generator and discriminator."""

from __future__ import annotations

import contextlib
from typing import Iterator

import torch
import torch.nn.functional as F
from torch import nn


class InstanceNorm(nn.InstanceNorm2d):
    """Affine instance norm whose statistics can be recorded and held fixed.

    Holding statistics fixed turns the layer into a per-channel affine map, which
    restores spatial locality. Probes use this to check receptive fields.
    """

    def __init__(self, num_features: int, eps: float = 1e-5):
        super().__init__(num_features, eps=eps, affine=True, track_running_stats=False)
        self._mode: str | None = None
        self._stats: tuple[torch.Tensor, torch.Tensor] | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self._mode is None:
            return super().forward(x)
        if self._mode == "record":
            var, mean = torch.var_mean(x, dim=(2, 3), keepdim=True, unbiased=False)
            self._stats = (mean.detach(), var.detach())
            mean, var = self._stats
        else:
            if self._stats is None:
                raise RuntimeError("no recorded statistics to hold fixed")
            mean, var = self._stats
        y = (x - mean) / torch.sqrt(var + self.eps)
        return y * self.weight[None, :, None, None] + self.bias[None, :, None, None]


@contextlib.contextmanager
def frozen_norm_statistics(model: nn.Module, reference: torch.Tensor) -> Iterator[None]:
    """Within the block, every InstanceNorm in ``model`` uses the statistics it
    saw on ``reference`` instead of those of its current input."""
    norms = [m for m in model.modules() if isinstance(m, InstanceNorm)]
    try:
        for m in norms:
            m._mode = "record"
        with torch.no_grad():
            model(reference)
        for m in norms:
            m._mode = "frozen"
        yield
    finally:
        for m in norms:
            m._mode = None
            m._stats = None


class BlurPool(nn.Module):
    """Anti-aliased stride-2 downsampling with a fixed binomial [1, 2, 1] filter."""

    def __init__(self, channels: int):
        super().__init__()
        a = torch.tensor([1.0, 2.0, 1.0])
        filt = a[:, None] * a[None, :]
        filt = filt / filt.sum()
        self.channels = channels
        # a buffer, not a parameter: the filter is never trained
        self.register_buffer("filt", filt[None, None].repeat(channels, 1, 1, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.pad(x, (1, 1, 1, 1), mode="reflect")
        return F.conv2d(x, self.filt.to(x.dtype), stride=2, groups=self.channels)


def init_gaussian(module: nn.Module, std: float = 0.02) -> None:
    """Zero-mean Gaussian conv weights, zero biases, unit norm scales."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


@contextlib.contextmanager
def seeded(seed: int) -> Iterator[None]:
    """Run the block under a private copy of the global torch RNG seeded with
    ``seed``; the caller's RNG state is restored afterwards."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
