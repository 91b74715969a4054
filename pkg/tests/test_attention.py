import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from attncut.attention import (
    KINDS,
    AttentionConfig,
    PatchSampler,
    bam_scores,
    build_mechanism,
    compute_significance,
    external_attention_scores,
    select_patches,
    self_attention_scores,
    triplet_attention_scores,
)

LEARNED = [k for k in KINDS if k != "random"]


def feats(c=8, h=6, w=6, seed=0, b=1):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(b, c, h, w, generator=g, dtype=torch.float64)


def mech(kind, c=8, seed=0, **kw):
    m = build_mechanism(c, AttentionConfig(kind=kind, **kw), seed)
    return m.double() if m is not None else None


@pytest.mark.parametrize("kind", KINDS)
def test_shape_finite_nonnegative(kind):
    f = feats(8, 5, 7, b=2)
    s = compute_significance(f, mech(kind), seed=1)
    assert s.shape == (2, 35)
    assert torch.isfinite(s).all() and (s >= 0).all()


def test_unbatched_input():
    s = compute_significance(feats()[0], mech("bam"))
    assert s.shape == (36,)


@pytest.mark.parametrize("kind", LEARNED)
def test_constant_map_gives_equal_scores_and_index_order(kind):
    f = torch.full((1, 8, 6, 6), 0.7, dtype=torch.float64)
    s = compute_significance(f, mech(kind))
    assert torch.allclose(s, s[:, :1].expand_as(s), rtol=0, atol=1e-12)
    sel = select_patches(s, 5)
    assert sel.indices[0].tolist() == [[0, 1, 2, 3, 4]]


def test_random_is_seed_deterministic():
    f = feats()
    a = compute_significance(f, "random", seed=7)
    assert torch.equal(a, compute_significance(f, "random", seed=7))
    assert not torch.equal(a, compute_significance(f, "random", seed=8))


@pytest.mark.parametrize("kind", LEARNED)
def test_mechanisms_deterministic_from_seed(kind):
    f = feats()
    assert torch.equal(compute_significance(f, kind, seed=3), compute_significance(f, kind, seed=3))


def test_self_attention_zero_input_uniform():
    s = self_attention_scores(torch.zeros(1, 8, 4, 4, dtype=torch.float64), mech("self_attention"))
    assert torch.allclose(s, torch.ones_like(s), atol=1e-12)


def test_self_attention_column_sums_oracle():
    m = mech("self_attention", c=8, seed=2)
    wq = m.query.weight.detach()[:, :, 0, 0].numpy()
    bq = m.query.bias.detach().numpy()
    wk = m.key.weight.detach()[:, :, 0, 0].numpy()
    bk = m.key.bias.detach().numpy()
    rng = np.random.default_rng(0)
    base = rng.uniform(0.5, 1.0, size=8)
    f = base[:, None] + 0.05 * rng.standard_normal((8, 25))
    # push one location along the key direction every query favours
    q_bar = wq @ base + bq
    hot = 13
    f[:, hot] += 6.0 * (wk.T @ q_bar) / np.linalg.norm(wk.T @ q_bar)
    # direct computation: row-softmax of q_i . k_j, then column sums
    q = (wq @ f).T + bq
    k = (wk @ f).T + bk
    logits = q @ k.T
    a = np.exp(logits - logits.max(1, keepdims=True))
    a /= a.sum(1, keepdims=True)
    expected = a.sum(0)
    got = m(torch.from_numpy(f.reshape(1, 8, 5, 5)))[0].detach().numpy()
    np.testing.assert_allclose(got, expected, rtol=1e-12)
    assert int(np.argmax(got)) == hot
    assert select_patches(torch.from_numpy(got), 1).indices[0].tolist() == [hot]


def test_self_attention_chunking_matches_full_map():
    m = build_mechanism(8, AttentionConfig(kind="self_attention", chunk_size=7), 0).double()
    f = feats(8, 6, 6)
    full = m.attention_map(f).sum(1)
    assert torch.allclose(m(f), full, atol=1e-12)


def test_external_attention_mass():
    m = mech("external_attention", c=8)
    s = external_attention_scores(feats(), m)
    # each memory unit spreads unit mass over the locations
    assert s.sum().item() == pytest.approx(m.memory.out_features)


def test_bam_and_triplet_in_unit_interval():
    f = feats(8, 6, 6)
    for s in (bam_scores(f, mech("bam")), triplet_attention_scores(f, mech("triplet"))):
        assert ((s > 0) & (s < 1)).all()


def test_module_level_helpers_build_from_seed():
    f = feats()
    assert torch.equal(bam_scores(f.float(), seed=4), bam_scores(f.float(), seed=4))


@pytest.mark.parametrize("kind", KINDS)
def test_same_length_for_all_mechanisms(kind):
    f = feats(16, 4, 9)
    assert compute_significance(f, mech(kind, c=16)).shape[-1] == 36


def _transpose_scores(s, h, w):
    return s.reshape(-1, h, w).transpose(1, 2).reshape(s.shape[0], -1)


def _symmetrize(m):
    with torch.no_grad():
        for mod in m.modules():
            if isinstance(mod, torch.nn.Conv2d) and mod.kernel_size[0] > 1:
                mod.weight.copy_((mod.weight + mod.weight.transpose(-1, -2)) / 2)


@pytest.mark.parametrize("kind", ["self_attention", "external_attention", "bam", "triplet"])
@pytest.mark.parametrize("seed", range(3))
def test_transpose_equivariance(kind, seed):
    m = mech(kind, seed=seed)
    if kind == "bam":
        _symmetrize(m)
    if kind == "triplet":
        # the C-W and H-C gates swap roles under transposition
        _symmetrize(m.hw)
        with torch.no_grad():
            m.hc.conv.weight.copy_(m.cw.conv.weight.transpose(-1, -2))
            m.hc.conv.bias.copy_(m.cw.conv.bias)
    f = feats(8, 5, 7, seed=seed)
    s = m(f)
    s_t = m(f.transpose(2, 3))
    assert torch.allclose(s_t, _transpose_scores(s, 5, 7), atol=1e-12)


def test_channel_minimum_and_finiteness():
    m = mech("self_attention")
    with pytest.raises(ValueError, match="channels"):
        m(torch.zeros(1, 0, 4, 4, dtype=torch.float64))
    bad = feats()
    bad[0, 0, 0, 0] = float("nan")
    for kind in KINDS:
        with pytest.raises(ValueError, match="non-finite"):
            compute_significance(bad, mech(kind))


def test_unknown_kind():
    with pytest.raises(ValueError):
        AttentionConfig(kind="cbam")
    assert AttentionConfig(kind="self").kind == "self_attention"
    assert AttentionConfig(kind="external").kind == "external_attention"


# ----- top-k selection


def test_tie_break_fixture():
    sel = select_patches(torch.tensor([0.1, 0.9, 0.9, 0.2]), 2)
    assert sel.indices[0].tolist() == [1, 2]
    assert sel.significance[0].tolist() == pytest.approx([0.9, 0.9])


def test_k_larger_than_map_selects_all():
    s = torch.tensor([0.3, 0.1, 0.2])
    sel = select_patches(s, 10)
    assert sel.indices[0].tolist() == [0, 2, 1]


def test_selection_properties():
    s = torch.rand(2, 50, dtype=torch.float64)
    sel = select_patches([s, s[:, :10]], 16)
    assert [i.shape[-1] for i in sel.indices] == [16, 10]
    for idx, sig in zip(sel.indices, sel.significance):
        assert all(len(set(r.tolist())) == len(r) for r in idx)
        assert (sig[:, :-1] >= sig[:, 1:]).all()


def test_selection_rejects_bad_input():
    with pytest.raises(ValueError):
        select_patches(torch.rand(5), 0)
    with pytest.raises(ValueError):
        select_patches(torch.tensor([0.1, float("inf")]), 1)


MONOTONE = [
    lambda x: 3 * x + 2,
    lambda x: x**3,
    np.exp,
    np.arctan,
    lambda x: np.log1p(x - x.min()),
]


@settings(max_examples=1000, deadline=None)
@given(
    values=st.lists(st.integers(-10_000, 10_000), min_size=1, max_size=40, unique=True),
    k=st.integers(1, 45),
    which=st.integers(0, len(MONOTONE) - 1),
)
def test_topk_invariant_under_monotone_rescaling(values, k, which):
    s = np.array(values, dtype=np.float64) / 1000.0
    t = MONOTONE[which](s)
    a = select_patches(torch.from_numpy(s), k).indices[0]
    b = select_patches(torch.from_numpy(t), k).indices[0]
    assert torch.equal(a, b)


def test_sampler_holds_all_weights():
    sampler = PatchSampler([3, 8, 16], AttentionConfig(kind="triplet"), k=4)
    assert len(sampler.scorers) == 3
    assert sum(p.numel() for p in sampler.parameters()) > 0
    rand = PatchSampler([3, 8, 16], AttentionConfig(kind="random"), k=4)
    assert sum(p.numel() for p in rand.parameters()) == 0


def test_sampler_random_layers_independent():
    sampler = PatchSampler([8, 8], AttentionConfig(kind="random"), k=4)
    f = feats()
    a, b = sampler.significance([f, f], seed=0)
    assert not torch.equal(a, b)
    sel = sampler.select([f, f], seed=0)
    assert [i.shape for i in sel.indices] == [(1, 4), (1, 4)]
