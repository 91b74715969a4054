"""Projection heads and the InfoNCE / multi-layer PatchNCE losses."""

from __future__ import annotations

import torch
from torch import nn

from .attention import PatchSampler, PatchSelection, select_patches
from .layers import init_gaussian, seeded

NORM_EPS = 1e-12
UNIT_TOL = 1e-5


class ProjectionHead(nn.Module):
    """One 2-layer MLP (C_l -> dim -> dim, ReLU between) per tap layer."""

    def __init__(self, in_channels: list[int], dim: int = 256):
        super().__init__()
        self.dim = dim
        self.mlps = nn.ModuleList(
            nn.Sequential(nn.Linear(c, dim), nn.ReLU(), nn.Linear(dim, dim)) for c in in_channels
        )

    def forward(self, feats: torch.Tensor, layer: int) -> torch.Tensor:
        return l2_normalize(self.mlps[layer](feats))


def build_heads(in_channels: list[int], dim: int = 256, seed: int = 0) -> ProjectionHead:
    with seeded(seed):
        heads = ProjectionHead(in_channels, dim)
        init_gaussian(heads, 0.02)
    return heads


def l2_normalize(v: torch.Tensor) -> torch.Tensor:
    return v / (v.norm(dim=-1, keepdim=True) + NORM_EPS)


def project(head: ProjectionHead, feats: torch.Tensor, layer: int) -> torch.Tensor:
    """``k x C_l`` (or ``B x k x C_l``) features to unit-norm embeddings."""
    if feats.shape[-2] < 1:
        raise ValueError("need at least one location to project")
    return head(feats, layer)


def _check_unit(name: str, v: torch.Tensor) -> None:
    err = (v.norm(dim=-1) - 1).abs().max()
    if err > UNIT_TOL:
        raise ValueError(f"{name} is not unit-norm (max deviation {float(err):.2e})")


def info_nce(query, positive, negatives, tau: float = 0.07, check_unit: bool = True) -> torch.Tensor:
    """Cross-entropy of the (N+1)-way softmax over
    ``[q.p, q.n_1, ..., q.n_N] / tau`` with the positive as the target class.

    ``query`` and ``positive`` are ``D`` vectors, ``negatives`` is ``N x D``.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    query, positive, negatives = (torch.as_tensor(t) for t in (query, positive, negatives))
    if negatives.ndim != 2 or negatives.shape[0] < 1:
        raise ValueError("need at least one negative (N x D)")
    if check_unit:
        for name, v in (("query", query), ("positive", positive), ("negatives", negatives)):
            _check_unit(name, v)
    logits = torch.cat([(query * positive).sum()[None], negatives @ query]) / tau
    return -torch.log_softmax(logits, dim=0)[0]


def patch_nce_terms(q: torch.Tensor, p: torch.Tensor, tau: float) -> torch.Tensor:
    """Per-query InfoNCE for ``B x k x D`` queries and keys of one layer.

    Query ``i`` takes key ``i`` as its positive and the other ``k - 1`` keys of the
    same image as negatives. Returns ``B x k`` losses.
    """
    logits = torch.bmm(q, p.transpose(1, 2)) / tau
    return -torch.diagonal(torch.log_softmax(logits, dim=-1), dim1=1, dim2=2)


def gather_locations(feat: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """``B x C x H x W`` features at flat indices ``B x k`` -> ``B x k x C``."""
    flat = feat.flatten(2)
    return torch.gather(flat, 2, idx[:, None, :].expand(-1, flat.shape[1], -1)).transpose(1, 2)


def patch_nce_from_features(
    feats_src: list[torch.Tensor],
    feats_out: list[torch.Tensor],
    heads: ProjectionHead,
    selection: PatchSelection,
    tau: float = 0.07,
) -> torch.Tensor:
    """Mean InfoNCE over every layer and selected location.

    Queries come from the translated image, positives and negatives from the
    source image at the same locations.
    """
    terms = []
    for layer, (fs, fo, idx) in enumerate(zip(feats_src, feats_out, selection.indices)):
        if idx.shape[-1] < 2:
            raise ValueError(f"need >= 2 locations per layer for negatives (layer {layer} has {idx.shape[-1]})")
        keys = heads(gather_locations(fs, idx), layer)
        queries = heads(gather_locations(fo, idx), layer)
        terms.append(patch_nce_terms(queries, keys, tau).flatten())
    return torch.cat(terms).mean()


def patch_nce_loss(gen, heads: ProjectionHead, sampler: PatchSampler, x, y_hat, k=None, tau=0.07, seed=0):
    """PatchNCE between source ``x`` and its translation ``y_hat``.

    Significance is scored on the source features only; the same locations
    are then read from both feature stacks.
    """
    if x.shape != y_hat.shape:
        raise ValueError(f"source {tuple(x.shape)} and translation {tuple(y_hat.shape)} differ in shape")
    k = sampler.k if k is None else k
    if k < 2:
        raise ValueError("need >= 2 locations per layer for negatives")
    feats_src = gen.encode(x)
    feats_out = gen.encode(y_hat)
    # hard top-k carries no gradient, so scoring runs without a graph
    with torch.no_grad():
        significance = sampler.significance(feats_src, seed)
    selection = select_patches(significance, k)
    return patch_nce_from_features(feats_src, feats_out, heads, selection, tau)


def identity_patch_nce(gen, heads, sampler, y, k=None, tau=0.07, seed=0, y_idt=None):
    """PatchNCE on a target-domain batch and its pass through G."""
    if y_idt is None:
        y_idt = gen(y)
    return patch_nce_loss(gen, heads, sampler, y, y_idt, k, tau, seed)
