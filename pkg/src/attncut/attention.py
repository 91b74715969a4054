"""Significance scoring of feature-map locations and top-k patch selection.

Each mechanism maps a ``B x C x H x W`` feature map to ``B x (H*W)`` finite,
non-negative scores, one per spatial location (flat index ``h * W + w``):

* ``self_attention``: SAGAN-style 1x1 query/key projections; a location's score is
  the total attention it receives, i.e. the column sum of the row-softmaxed map.
* ``external_attention``: a learned key memory of ``M`` units; the logits are
  softmaxed over locations, so each unit spreads unit mass over the map, and a
  location's score is the mass it collects from all units.
* ``bam``: the sigmoid of the spatial branch of a bottleneck attention module.
* ``triplet``: the three triplet-attention gates (C-W, H-C, H-W) broadcast to
  C x H x W, averaged, then averaged over channels.
* ``random``: i.i.d. uniform scores drawn from the seed, so top-k is a uniform
  sample without replacement.

Mechanism weights live in their own modules, never inside G or D.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .layers import seeded

KINDS = ("self_attention", "external_attention", "bam", "triplet", "random")
ALIASES = {"self": "self_attention", "external": "external_attention"}


def canonical_kind(kind: str) -> str:
    kind = ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown attention kind {kind!r}; choose from {KINDS + tuple(ALIASES)}")
    return kind


@dataclass(frozen=True)
class AttentionConfig:
    kind: str = "self_attention"
    key_ratio: int = 8
    memory_units: int = 64
    reduction: int = 16
    dilation: int = 4
    gate_kernel: int = 7
    chunk_size: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))


def _check_features(features: torch.Tensor, min_channels: int) -> None:
    if features.ndim != 4:
        raise ValueError(f"expected B x C x H x W features, got shape {tuple(features.shape)}")
    if features.shape[1] < min_channels:
        raise ValueError(f"need at least {min_channels} channels, got {features.shape[1]}")
    if not torch.isfinite(features).all():
        raise ValueError("features contain non-finite values")


class SelfAttentionScore(nn.Module):
    min_channels = 1

    def __init__(self, channels: int, key_ratio: int = 8, chunk_size: int = 1024):
        super().__init__()
        self.key_dim = max(channels // key_ratio, 1)
        self.query = nn.Conv2d(channels, self.key_dim, 1)
        self.key = nn.Conv2d(channels, self.key_dim, 1)
        self.chunk_size = chunk_size

    def attention_map(self, features: torch.Tensor) -> torch.Tensor:
        """Full ``B x S x S`` map; row ``i`` is the distribution of query ``i``."""
        q = self.query(features).flatten(2).transpose(1, 2)
        k = self.key(features).flatten(2)
        return torch.softmax(q @ k, dim=-1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        _check_features(features, self.min_channels)
        q = self.query(features).flatten(2).transpose(1, 2)
        k = self.key(features).flatten(2)
        received = torch.zeros(k.shape[0], k.shape[2], dtype=features.dtype, device=features.device)
        # row chunks keep memory at chunk_size x S for large maps
        for start in range(0, q.shape[1], self.chunk_size):
            rows = torch.softmax(q[:, start : start + self.chunk_size] @ k, dim=-1)
            received = received + rows.sum(dim=1)
        return received


class ExternalAttentionScore(nn.Module):
    min_channels = 1

    def __init__(self, channels: int, memory_units: int = 64):
        super().__init__()
        self.memory = nn.Linear(channels, memory_units, bias=False)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        _check_features(features, self.min_channels)
        logits = self.memory(features.flatten(2).transpose(1, 2))  # B x S x M
        return torch.softmax(logits, dim=1).sum(dim=2)


class BAMScore(nn.Module):
    min_channels = 1

    def __init__(self, channels: int, reduction: int = 16, dilation: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.spatial = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(),
            nn.Conv2d(hidden, hidden, 3, padding=dilation, dilation=dilation, padding_mode="replicate"),
            nn.ReLU(),
            nn.Conv2d(hidden, hidden, 3, padding=dilation, dilation=dilation, padding_mode="replicate"),
            nn.ReLU(),
            nn.Conv2d(hidden, 1, 1),
        )

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        _check_features(features, self.min_channels)
        return torch.sigmoid(self.spatial(features)).flatten(1)


def _zpool(x: torch.Tensor) -> torch.Tensor:
    return torch.cat([x.amax(dim=1, keepdim=True), x.mean(dim=1, keepdim=True)], dim=1)


class _Gate(nn.Module):
    def __init__(self, kernel: int):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel, padding=kernel // 2, padding_mode="replicate")

    def forward(self, x):
        return torch.sigmoid(self.conv(_zpool(x)))[:, 0]


class TripletAttentionScore(nn.Module):
    min_channels = 1

    def __init__(self, channels: int, kernel: int = 7):
        super().__init__()
        self.cw = _Gate(kernel)
        self.hc = _Gate(kernel)
        self.hw = _Gate(kernel)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        _check_features(features, self.min_channels)
        g_cw = self.cw(features.permute(0, 2, 1, 3))  # B x C x W
        g_hc = self.hc(features.permute(0, 3, 2, 1))  # B x H x C
        g_hw = self.hw(features)  # B x H x W
        score = (g_cw.mean(1)[:, None, :] + g_hc.mean(2)[:, :, None] + g_hw) / 3
        return score.flatten(1)


def random_scores(features: torch.Tensor, seed: int) -> torch.Tensor:
    b, _, h, w = features.shape
    g = torch.Generator().manual_seed(int(seed))
    return torch.rand(b, h * w, generator=g, dtype=torch.float64).to(features.dtype)


def _make_scorer(channels: int, cfg: AttentionConfig) -> nn.Module | None:
    if cfg.kind == "self_attention":
        return SelfAttentionScore(channels, cfg.key_ratio, cfg.chunk_size)
    if cfg.kind == "external_attention":
        return ExternalAttentionScore(channels, cfg.memory_units)
    if cfg.kind == "bam":
        return BAMScore(channels, cfg.reduction, cfg.dilation)
    if cfg.kind == "triplet":
        return TripletAttentionScore(channels, cfg.gate_kernel)
    return None


def build_mechanism(channels: int, cfg: AttentionConfig | str, seed: int = 0) -> nn.Module | None:
    """One scorer for a ``channels``-wide map, initialised from ``seed``.

    Returns None for ``random``, which has no weights.
    """
    if isinstance(cfg, str):
        cfg = AttentionConfig(kind=cfg)
    with seeded(seed):
        return _make_scorer(channels, cfg)


def _fresh(features: torch.Tensor, kind: str, seed: int) -> nn.Module:
    return build_mechanism(features.shape[1], kind, seed).to(features.dtype)


def self_attention_scores(features, mechanism: SelfAttentionScore | None = None, seed: int = 0):
    mechanism = mechanism or _fresh(features, "self_attention", seed)
    return mechanism(features)


def external_attention_scores(features, mechanism: ExternalAttentionScore | None = None, seed: int = 0):
    mechanism = mechanism or _fresh(features, "external_attention", seed)
    return mechanism(features)


def bam_scores(features, mechanism: BAMScore | None = None, seed: int = 0):
    mechanism = mechanism or _fresh(features, "bam", seed)
    return mechanism(features)


def triplet_attention_scores(features, mechanism: TripletAttentionScore | None = None, seed: int = 0):
    mechanism = mechanism or _fresh(features, "triplet", seed)
    return mechanism(features)


def compute_significance(features: torch.Tensor, mechanism: nn.Module | str | None, seed: int = 0) -> torch.Tensor:
    """Score every location of one tap.

    ``mechanism`` is a scorer module, a kind name (a fresh scorer is built from
    ``seed``), or ``"random"``/None for the uniform baseline. Accepts ``C x H x W``
    (returns length ``S``) or ``B x C x H x W`` (returns ``B x S``).
    """
    single = features.ndim == 3
    if single:
        features = features[None]
    if isinstance(mechanism, str):
        mechanism = None if AttentionConfig(kind=mechanism).kind == "random" else _fresh(features, mechanism, seed)
    if mechanism is None:
        _check_features(features, 1)
        scores = random_scores(features, seed)
    else:
        scores = mechanism(features)
    return scores[0] if single else scores


@dataclass
class PatchSelection:
    """Per-layer selected flat indices (``B x k_l``) and their scores, sorted by
    descending significance with ties broken by ascending index."""

    indices: list[torch.Tensor] = field(default_factory=list)
    significance: list[torch.Tensor] = field(default_factory=list)
    k: int = 256


def top_k(scores: torch.Tensor, k: int) -> tuple[torch.Tensor, torch.Tensor]:
    if k < 1:
        raise ValueError("k must be at least 1")
    if not torch.isfinite(scores).all():
        raise ValueError("significance contains non-finite values")
    # stable sort keeps ascending index order among equal scores
    values, order = torch.sort(scores, dim=-1, descending=True, stable=True)
    k = min(k, scores.shape[-1])
    return order[..., :k], values[..., :k]


def select_patches(significance, k: int = 256) -> PatchSelection:
    """Top-k locations per layer. ``significance`` is one score array or a
    list with one per layer."""
    layers = significance if isinstance(significance, (list, tuple)) else [significance]
    sel = PatchSelection(k=k)
    for s in layers:
        s = torch.as_tensor(s)
        idx, val = top_k(s, k)
        sel.indices.append(idx)
        sel.significance.append(val)
    return sel


class PatchSampler(nn.Module):
    """Per-tap scorers plus the top-k rule; holds all attention parameters."""

    def __init__(self, tap_channels: list[int], cfg: AttentionConfig | None = None, k: int = 256, seed: int = 0):
        super().__init__()
        self.cfg = cfg or AttentionConfig()
        self.k = k
        self.seed = seed
        scorers = [build_mechanism(c, self.cfg, seed + i) for i, c in enumerate(tap_channels)]
        self.scorers = nn.ModuleList(s for s in scorers if s is not None)
        self.n_layers = len(tap_channels)

    @property
    def kind(self) -> str:
        return self.cfg.kind

    def significance(self, features: list[torch.Tensor], seed: int = 0) -> list[torch.Tensor]:
        if len(features) != self.n_layers:
            raise ValueError(f"expected {self.n_layers} feature maps, got {len(features)}")
        if self.kind == "random":
            # distinct stream per layer; step-level variety comes from the caller's seed
            return [compute_significance(f, None, seed * 1009 + i) for i, f in enumerate(features)]
        return [scorer(f) for scorer, f in zip(self.scorers, features)]

    def select(self, features: list[torch.Tensor], seed: int = 0) -> PatchSelection:
        return select_patches(self.significance(features, seed), self.k)

