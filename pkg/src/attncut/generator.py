"""ResNet encoder-decoder generator with named feature taps.

Layout (default config, ``c`` = base channels)::

    stem    reflect-pad 3, conv7 3->c, IN, ReLU
    down1   conv3 c->2c (tap), IN, ReLU, blur-pool /2
    down2   conv3 2c->4c (tap), IN, ReLU, blur-pool /2
    res1..9 residual blocks at 4c (each block output is a tap)
    up1..2  transposed conv3 /2, IN, ReLU
    head    reflect-pad 3, conv7 c->3, tanh

The encoder is everything up to and including residual block 5. Downsampling
taps are read off the stride-1 convolution, before the blur-pool, which gives
receptive fields of 1, 9, 15, 35 and 99 pixels for the default taps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .layers import BlurPool, InstanceNorm, frozen_norm_statistics, init_gaussian, seeded

DEFAULT_TAPS = ("input_rgb", "down1", "down2", "res1", "res5")


@dataclass(frozen=True)
class GeneratorConfig:
    n_downsampling: int = 2
    n_residual_blocks: int = 9
    base_channels: int = 64
    norm: str = "instance"
    tap_layers: tuple[str, ...] = DEFAULT_TAPS
    encoder_blocks: int = 5

    def __post_init__(self):
        object.__setattr__(self, "tap_layers", tuple(self.tap_layers))
        if self.norm != "instance":
            raise ValueError(f"unsupported norm {self.norm!r}; only 'instance' is available")
        if self.n_downsampling < 1 or self.base_channels < 1:
            raise ValueError("n_downsampling and base_channels must be positive")
        if self.n_residual_blocks <= self.encoder_blocks:
            raise ValueError(
                f"n_residual_blocks={self.n_residual_blocks} leaves no decoder blocks "
                f"after the encoder split at block {self.encoder_blocks + 1}"
            )
        for tap in self.tap_layers:
            if tap not in self.available_taps:
                raise ValueError(f"unknown tap {tap!r}; available: {self.available_taps}")

    @property
    def available_taps(self) -> tuple[str, ...]:
        return (
            ("input_rgb",)
            + tuple(f"down{i + 1}" for i in range(self.n_downsampling))
            + tuple(f"res{i + 1}" for i in range(self.encoder_blocks))
        )

    def tap_channels(self, tap: str) -> int:
        if tap == "input_rgb":
            return 3
        if tap.startswith("down"):
            return self.base_channels * 2 ** int(tap[4:])
        return self.base_channels * 2**self.n_downsampling


@dataclass(frozen=True)
class TapInfo:
    name: str
    receptive_field: int
    stride: int
    channels: int


@dataclass
class FeatureStack:
    """Per-tap feature maps, in tap order."""

    features: list[torch.Tensor]
    taps: list[TapInfo] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i: int) -> torch.Tensor:
        return self.features[i]


class DownBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=1, padding=1)
        self.norm = InstanceNorm(out_ch)
        self.act = nn.ReLU()
        self.pool = BlurPool(out_ch)

    def forward(self, x):
        tap = self.conv(x)
        return self.pool(self.act(self.norm(tap))), tap


class ResidualBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            InstanceNorm(dim),
            nn.ReLU(),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            InstanceNorm(dim),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.stem = nn.Sequential(
            nn.ReflectionPad2d(3), nn.Conv2d(3, c, kernel_size=7), InstanceNorm(c), nn.ReLU()
        )
        self.down = nn.ModuleList()
        for i in range(cfg.n_downsampling):
            self.down.append(DownBlock(c * 2**i, c * 2 ** (i + 1)))
        width = c * 2**cfg.n_downsampling
        self.blocks = nn.ModuleList(ResidualBlock(width) for _ in range(cfg.n_residual_blocks))
        up = []
        for i in range(cfg.n_downsampling):
            ch = width // 2**i
            up += [
                nn.ConvTranspose2d(ch, ch // 2, 3, stride=2, padding=1, output_padding=1),
                InstanceNorm(ch // 2),
                nn.ReLU(),
            ]
        self.up = nn.Sequential(*up)
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(c, 3, kernel_size=7), nn.Tanh())

    @property
    def size_multiple(self) -> int:
        return 2**self.cfg.n_downsampling

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stem(x)
        for blk in self.down:
            h, _ = blk(h)
        for blk in self.blocks:
            h = blk(h)
        return self.head(self.up(h))

    def encode(self, x: torch.Tensor, taps=None) -> list[torch.Tensor]:
        """Run the encoder only as far as the deepest requested tap."""
        taps = tuple(self.cfg.tap_layers if taps is None else taps)
        for t in taps:
            if t not in self.cfg.available_taps:
                raise ValueError(f"unknown tap {t!r}; available: {self.cfg.available_taps}")
        found = {}
        if "input_rgb" in taps:
            found["input_rgb"] = x
        remaining = set(taps) - set(found)
        h = self.stem(x) if remaining else x
        for i, blk in enumerate(self.down):
            if not remaining:
                break
            h, tap = blk(h)
            name = f"down{i + 1}"
            if name in remaining:
                found[name] = tap
                remaining.discard(name)
        for i, blk in enumerate(self.blocks):
            if not remaining:
                break
            h = blk(h)
            name = f"res{i + 1}"
            if name in remaining:
                found[name] = h
                remaining.discard(name)
        return [found[t] for t in taps]


def build_generator(cfg: GeneratorConfig | None = None, seed: int = 0) -> Generator:
    cfg = cfg or GeneratorConfig()
    with seeded(seed):
        gen = Generator(cfg)
        init_gaussian(gen, 0.02)
    return gen


def _check_image_batch(x: torch.Tensor, multiple: int) -> None:
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected a B x 3 x H x W batch, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % multiple or w % multiple:
        raise ValueError(f"spatial size {h}x{w} is not divisible by {multiple}")
    if x.numel() and (x.min() < -1.0 - 1e-6 or x.max() > 1.0 + 1e-6):
        raise ValueError("image values must lie in [-1, 1]")


def translate(gen: Generator, x: torch.Tensor) -> torch.Tensor:
    """Inference-mode translation of a batch."""
    _check_image_batch(x, gen.size_multiple)
    was_training = gen.training
    gen.eval()
    try:
        with torch.no_grad():
            return gen(x)
    finally:
        gen.train(was_training)


def encode_features(gen: Generator, img: torch.Tensor, tap_layers=None) -> FeatureStack:
    _check_image_batch(img, gen.size_multiple)
    taps = tuple(gen.cfg.tap_layers if tap_layers is None else tap_layers)
    feats = gen.encode(img, taps)
    info = [
        TapInfo(t, receptive_field(t, gen.cfg), tap_stride(t, gen.cfg), gen.cfg.tap_channels(t))
        for t in taps
    ]
    return FeatureStack(feats, info)


def _geometry(cfg: GeneratorConfig):
    """(kernel, stride) of every spatial op along the trunk, with tap markers."""
    ops: list = ["input_rgb", (7, 1)]
    for i in range(cfg.n_downsampling):
        ops += [(3, 1), f"down{i + 1}", (3, 2)]
    for i in range(cfg.n_residual_blocks):
        ops += [(3, 1), (3, 1), f"res{i + 1}"]
    return ops


def _walk(tap: str, cfg: GeneratorConfig) -> tuple[int, int]:
    if tap not in cfg.available_taps:
        raise ValueError(f"unknown tap {tap!r}; available: {cfg.available_taps}")
    rf, jump = 1, 1
    for op in _geometry(cfg):
        if op == tap:
            return rf, jump
        if isinstance(op, tuple):
            k, s = op
            rf += (k - 1) * jump
            jump *= s
    raise AssertionError("unreachable")


def receptive_field(tap: str, cfg: GeneratorConfig | None = None) -> int:
    """Analytic receptive field (edge length in pixels) of one tap."""
    return _walk(tap, cfg or GeneratorConfig())[0]


def tap_stride(tap: str, cfg: GeneratorConfig | None = None) -> int:
    return _walk(tap, cfg or GeneratorConfig())[1]


def measure_receptive_field(gen: Generator, tap: str, image_size: int = 128, seed: int = 0) -> int:
    """Empirical receptive field of ``tap``, found by perturbation.

    Instance-norm statistics are held at their values for a reference image so
    that each feature depends on its own input window only. The input gradient
    of the tap's centre location, summed over channels, is non-zero exactly on
    that window; its extent is returned.
    """
    g = torch.Generator().manual_seed(seed)
    dtype = next(gen.parameters()).dtype
    ref = (torch.rand(1, 3, image_size, image_size, generator=g, dtype=torch.float64) * 2 - 1).to(dtype)

    class _Tap(nn.Module):
        def __init__(self, inner):
            super().__init__()
            self.inner = inner

        def forward(self, x):
            return self.inner.encode(x, (tap,))[0]

    probe = _Tap(gen)
    with frozen_norm_statistics(probe, ref):
        x = ref.clone().requires_grad_(True)
        feat = probe(x)
        hc, wc = feat.shape[-2] // 2, feat.shape[-1] // 2
        feat[0, :, hc, wc].sum().backward()
    support = (x.grad[0].abs().sum(0) > 0).nonzero()
    rows = support[:, 0].max() - support[:, 0].min() + 1
    cols = support[:, 1].max() - support[:, 1].min() + 1
    if rows != cols:
        raise AssertionError(f"non-square receptive field {rows}x{cols}")
    return int(rows)
