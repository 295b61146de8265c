"""Factored arithmetic against dense oracles and the truncation contract."""

import numpy as np
import pytest

from kroncontrol.lowrank import (
    CanonicalTensor3,
    LowRankMatrix,
    axpy,
    from_dense,
    hadamard_scale,
    inner,
    norm,
    to_dense,
    truncate,
)


def random_lowrank(rng, n1, n2, r, scale=1.0):
    return LowRankMatrix(scale * rng.standard_normal((n1, r)),
                         rng.standard_normal((n2, r)))


def test_truncate_rank_one_unchanged():
    rng = np.random.default_rng(0)
    x = random_lowrank(rng, 12, 9, 1)
    y = truncate(x, 0.5)
    assert y.rank == 1
    np.testing.assert_allclose(to_dense(y), to_dense(x), atol=1e-14)


def test_truncate_exact_cancellation_gives_zero_rank():
    rng = np.random.default_rng(1)
    g = random_lowrank(rng, 10, 10, 3)
    diff = axpy(-1.0, g, g)
    assert truncate(diff, 1e-12).rank == 0


def test_truncate_matches_dense_svd_oracle():
    rng = np.random.default_rng(2)
    x = random_lowrank(rng, 31, 31, 5)
    dense = to_dense(x)
    # oracle: dense SVD truncation with the same tail criterion
    u, s, vt = np.linalg.svd(dense)
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
    keep = len(s) - int(np.searchsorted(tail[::-1], 1e-8 * tail[0],
                                        side="right"))
    oracle = (u[:, :keep] * s[:keep]) @ vt[:keep]
    got = to_dense(truncate(x, 1e-8))
    assert np.abs(got - oracle).max() <= 1e-12 * np.abs(oracle).max()


def test_truncate_respects_rank_max():
    rng = np.random.default_rng(3)
    x = random_lowrank(rng, 20, 20, 8)
    y = truncate(x, 1e-14, rank_max=3)
    assert y.rank == 3


def test_truncate_canonical_form():
    rng = np.random.default_rng(4)
    y = truncate(random_lowrank(rng, 25, 18, 6), 1e-10)
    # left columns orthogonal (scaled by singular values), right orthonormal
    lg = y.left.T @ y.left
    np.testing.assert_allclose(lg, np.diag(np.diag(lg)), atol=1e-10 * lg[0, 0])
    np.testing.assert_allclose(y.right.T @ y.right, np.eye(y.rank), atol=1e-12)


def test_axpy_identity_and_cancellation():
    rng = np.random.default_rng(5)
    x = random_lowrank(rng, 8, 7, 2)
    zero = LowRankMatrix.zero(8, 7)
    assert to_dense(axpy(1.0, x, zero)) == pytest.approx(to_dense(x))
    assert truncate(axpy(-1.0, x, x), 1e-13).rank == 0


def test_axpy_matches_dense_oracle():
    rng = np.random.default_rng(6)
    x = random_lowrank(rng, 15, 15, 3)
    y = random_lowrank(rng, 15, 15, 4)
    got = to_dense(axpy(-2.5, x, y))
    want = -2.5 * to_dense(x) + to_dense(y)
    np.testing.assert_allclose(got, want, atol=1e-14 * np.abs(want).max())


def test_axpy_shape_mismatch():
    rng = np.random.default_rng(7)
    with pytest.raises(ValueError):
        axpy(1.0, random_lowrank(rng, 5, 5, 1), random_lowrank(rng, 5, 6, 1))


def test_inner_zero_and_positivity():
    rng = np.random.default_rng(8)
    x = random_lowrank(rng, 9, 11, 3)
    assert inner(x, LowRankMatrix.zero(9, 11)) == 0.0
    assert inner(x, x) >= 0.0


def test_inner_matches_dense_trace():
    rng = np.random.default_rng(9)
    x = random_lowrank(rng, 15, 15, 3)
    y = random_lowrank(rng, 15, 15, 5)
    want = float(np.trace(to_dense(x).T @ to_dense(y)))
    assert inner(x, y) == pytest.approx(want, rel=1e-13)


def test_hadamard_scale():
    rng = np.random.default_rng(10)
    x = random_lowrank(rng, 12, 10, 4)
    ones_u, ones_v = np.ones(12), np.ones(10)
    np.testing.assert_allclose(
        to_dense(hadamard_scale(x, ones_u, ones_v)), to_dense(x), atol=0.0)
    assert norm(hadamard_scale(x, np.zeros(12), ones_v)) == 0.0
    u = rng.standard_normal(12)
    v = rng.standard_normal(10)
    want = np.diag(u) @ to_dense(x) @ np.diag(v)
    np.testing.assert_allclose(to_dense(hadamard_scale(x, u, v)), want,
                               atol=1e-14 * np.abs(want).max())
    with pytest.raises(ValueError):
        hadamard_scale(x, np.ones(11), ones_v)


def test_dense_round_trip():
    rng = np.random.default_rng(11)
    x = random_lowrank(rng, 7, 7, 2)
    back = from_dense(to_dense(x), 1e-14)
    np.testing.assert_allclose(to_dense(back), to_dense(x), atol=1e-13)
    assert from_dense(np.zeros((5, 4)), 1e-10).rank == 0
    outer = np.outer(rng.standard_normal(6), rng.standard_normal(8))
    assert from_dense(outer, 1e-12).rank == 1


def test_dense_cap():
    huge = LowRankMatrix(np.zeros((4000, 1)), np.zeros((4000, 1)))
    with pytest.raises(ValueError):
        to_dense(huge)


def test_truncation_contract_randomized():
    """Projection, error bound, and Gram inner products on 1000 cases.

    Inputs are a clean low-rank signal plus small-scale noise columns, so
    the truncation actually discards something in most cases.
    """
    rng = np.random.default_rng(12)
    for case in range(1000):
        n1 = int(rng.integers(3, 24))
        n2 = int(rng.integers(3, 24))
        r_sig = int(rng.integers(1, min(n1, n2)))
        r_noise = int(rng.integers(0, 3))
        x = random_lowrank(rng, n1, n2, r_sig)
        if r_noise:
            x = axpy(1.0, random_lowrank(rng, n1, n2, r_noise, scale=1e-11), x)
        eps = 10.0 ** rng.uniform(-9, -4)
        y = truncate(x, eps)
        # error bound
        err = np.linalg.norm(to_dense(y) - to_dense(x))
        assert err <= eps * norm(x) * (1 + 1e-12)
        # projection: a second pass changes nothing
        z = truncate(y, eps)
        assert z.rank == y.rank
        assert np.abs(to_dense(z) - to_dense(y)).max() <= 1e-13 * max(norm(y), 1)
        # Gram inner product equals the dense Frobenius product
        w = random_lowrank(rng, n1, n2, int(rng.integers(1, 4)))
        want = float((to_dense(x) * to_dense(w)).sum())
        assert inner(x, w) == pytest.approx(want, rel=1e-11, abs=1e-11)


def test_inner_dense_agreement_on_grids_up_to_63():
    rng = np.random.default_rng(13)
    for n in (15, 31, 63):
        x = random_lowrank(rng, n, n, 4)
        y = random_lowrank(rng, n, n, 3)
        want = float((to_dense(x) * to_dense(y)).sum())
        assert inner(x, y) == pytest.approx(want, rel=1e-12)


def test_canonical_tensor3():
    rng = np.random.default_rng(14)
    panels = tuple(rng.standard_normal((n, 3)) for n in (4, 5, 6))
    t = CanonicalTensor3(panels)
    assert t.shape == (4, 5, 6)
    assert t.rank == 3
    want = sum(
        np.einsum("i,j,k->ijk", panels[0][:, r], panels[1][:, r],
                  panels[2][:, r])
        for r in range(3)
    )
    np.testing.assert_allclose(t.to_dense(), want, atol=1e-14)
    with pytest.raises(ValueError):
        CanonicalTensor3((panels[0], panels[1], rng.standard_normal((6, 2))))
