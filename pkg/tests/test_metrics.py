import json
import math

import numpy as np
import pytest
import scipy.linalg
import torch

from attncut.metrics import (
    REFERENCE_TABLE,
    TOY_EMBED_DIM,
    EmbeddedSet,
    classify_images,
    embed_images,
    evaluate,
    fid,
    inception_score,
    swd,
)


def eig_fid(a, b):
    """Oracle: the trace of sqrt(Sa Sb) as the sum of square roots of the
    eigenvalues of the (non-symmetric) product."""
    mu = a.mean(0) - b.mean(0)
    sa, sb = np.atleast_2d(np.cov(a, rowvar=False)), np.atleast_2d(np.cov(b, rowvar=False))
    ev = np.linalg.eigvals(sa @ sb)
    return float(mu @ mu + np.trace(sa) + np.trace(sb) - 2 * np.sqrt(np.clip(ev.real, 0, None)).sum())


def kl_is(p):
    """Oracle: exp of the mean KL to the marginal, by explicit loops."""
    m, c = len(p), len(p[0])
    marg = [sum(row[j] for row in p) / m for j in range(c)]
    total = 0.0
    for row in p:
        total += sum(row[j] * math.log(row[j] / marg[j]) for j in range(c) if row[j] > 0)
    return math.exp(total / m)


def loop_swd(a, b, n, seed):
    """Oracle: one projection at a time with python sorting."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((a.shape[1], n))
    d /= np.linalg.norm(d, axis=0, keepdims=True)
    vals = []
    for j in range(n):
        pa = sorted(float(v) for v in a @ d[:, j])
        pb = sorted(float(v) for v in b @ d[:, j])
        vals.append(math.sqrt(sum((u - v) ** 2 for u, v in zip(pa, pb)) / len(pa)))
    return sum(vals) / n


# ----- FID


def test_fid_identity():
    a = np.random.default_rng(0).standard_normal((50, 6))
    assert fid(a, a) == pytest.approx(0.0, abs=1e-6)


def test_fid_mean_shift_gaussians():
    rng = np.random.default_rng(1)
    m = np.array([1.0, -0.5, 0.25, 2.0])
    a = rng.standard_normal((10_000, 4))
    b = rng.standard_normal((10_000, 4)) + m
    assert fid(a, b) == pytest.approx(m @ m, rel=0.05)


@pytest.mark.parametrize("seed", range(6))
def test_fid_matches_eig_oracle_2d(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((40, 2)) @ rng.standard_normal((2, 2))
    b = rng.standard_normal((30, 2)) @ rng.standard_normal((2, 2)) + rng.standard_normal(2)
    assert fid(a, b) == pytest.approx(eig_fid(a, b), abs=1e-8)


def test_fid_matches_scipy_sqrtm():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((80, 5)), rng.standard_normal((60, 5)) * 1.5
    sa, sb = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
    ref = ((a.mean(0) - b.mean(0)) ** 2).sum() + np.trace(sa + sb - 2 * scipy.linalg.sqrtm(sa @ sb).real)
    assert fid(a, b) == pytest.approx(ref, abs=1e-8)


def test_fid_symmetric_and_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(10):
        a, b = rng.standard_normal((20, 3)), rng.standard_normal((25, 3)) * 0.5
        assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-8)
        assert fid(a, b) >= 0


def test_fid_rank_deficient_covariance():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((5, 8))  # fewer samples than dimensions
    b = rng.standard_normal((6, 8))
    assert math.isfinite(fid(a, b)) and fid(a, b) >= 0


def test_fid_errors():
    with pytest.raises(ValueError):
        fid(np.zeros((5, 3)), np.zeros((5, 4)))
    with pytest.raises(ValueError):
        fid(np.zeros((1, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        EmbeddedSet(np.array([[np.nan, 1.0]]))


# ----- Inception Score


def test_is_identical_rows():
    p = np.tile([0.2, 0.5, 0.3], (7, 1))
    assert inception_score(p)[0] == pytest.approx(1.0, abs=1e-12)


def test_is_one_hot_uniform_cover():
    p = np.eye(4)[[0, 1, 2, 3, 0, 1, 2, 3]]
    assert inception_score(p)[0] == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_is_matches_kl_oracle(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(3), size=6)
    assert inception_score(p, splits=1)[0] == pytest.approx(kl_is(p.tolist()), abs=1e-10)


def test_is_bounds_random():
    rng = np.random.default_rng(9)
    for _ in range(20):
        p = rng.dirichlet(np.full(5, 0.3), size=12)
        score = inception_score(p)[0]
        assert 1 - 1e-12 <= score <= 5 + 1e-12


def test_is_splits():
    p = np.eye(2)[[0, 1, 0, 1]]
    mean, std = inception_score(p, splits=2)
    assert mean == pytest.approx(2.0) and std == pytest.approx(0.0)


def test_is_rejects_off_simplex():
    with pytest.raises(ValueError):
        inception_score(np.array([[0.5, 0.6]]))


# ----- SWD


def test_swd_identity():
    a = np.random.default_rng(0).standard_normal((30, 5))
    assert swd(a, a, 32, seed=1) == 0.0


def test_swd_1d_shift():
    assert swd(np.array([[0.0], [1.0]]), np.array([[1.0], [2.0]]), 8) == pytest.approx(1.0, abs=1e-12)


def test_swd_matches_loop_oracle():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((25, 3)), rng.standard_normal((25, 3)) + 0.3
    assert swd(a, b, n_projections=64, seed=11) == pytest.approx(loop_swd(a, b, 64, 11), abs=1e-10)


def test_swd_symmetric_nonnegative():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((20, 4)), rng.standard_normal((20, 4)) * 2
    assert swd(a, b, seed=5) == pytest.approx(swd(b, a, seed=5), abs=1e-12)
    assert swd(a, b, seed=5) > 0


def test_swd_order_one():
    assert swd(np.array([[0.0], [1.0]]), np.array([[2.0], [3.0]]), 4, order=1) == pytest.approx(2.0)


def test_swd_resamples_larger_set():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((40, 3)), rng.standard_normal((25, 3))
    v = swd(a, b, seed=0)
    assert math.isfinite(v) and v == swd(a, b, seed=0)


def test_swd_decreases_under_interpolation():
    rng = np.random.default_rng(6)
    wins = 0
    for seed in range(20):
        a = rng.standard_normal((60, 4))
        b = rng.standard_normal((60, 4)) * 2 + 3
        vals = [swd(a, (1 - t) * b + t * a, 32, seed) for t in (0.0, 0.25, 0.5, 0.75, 1.0)]
        wins += all(x > y for x, y in zip(vals, vals[1:]))
    assert wins == 20


# ----- embedders and the report


def test_toy_embedder_stable_and_shaped():
    imgs = torch.rand(5, 3, 32, 32) * 2 - 1
    a, b = embed_images(imgs), embed_images(imgs)
    assert a.features.shape == (5, TOY_EMBED_DIM)
    assert np.array_equal(a.features, b.features)
    probs = classify_images(imgs)
    assert np.allclose(probs.sum(1), 1)


def test_pretrained_embedder_missing_weights(monkeypatch):
    monkeypatch.delenv("ATTNCUT_INCEPTION_WEIGHTS", raising=False)
    with pytest.raises(FileNotFoundError, match="ATTNCUT_INCEPTION_WEIGHTS"):
        embed_images(torch.zeros(2, 3, 32, 32), "inception")


def test_unknown_embedder():
    with pytest.raises(ValueError):
        embed_images(torch.zeros(2, 3, 32, 32), "vgg")


def test_evaluate_report():
    real = torch.rand(6, 3, 32, 32) * 2 - 1
    rep = evaluate(real, real, seed=3)
    assert rep.fid == pytest.approx(0.0, abs=1e-6)
    assert rep.swd == 0.0
    data = json.loads(rep.to_json())
    assert set(data) == {"fid", "is_mean", "is_std", "swd", "counts", "embedder", "seed"}
    assert data["counts"] == {"real": 6, "fake": 6}
    assert rep.to_json() == evaluate(real, real, seed=3).to_json()


def test_reference_table():
    assert REFERENCE_TABLE["triplet"]["fid"] == 50.55
    assert min(REFERENCE_TABLE, key=lambda k: REFERENCE_TABLE[k]["fid"]) == "triplet"
