import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from egograph.errors import DomainError, ParameterError, ShapeError
from egograph.reduction import nmf, nmf_init, project_nnls, smooth


def reference_mu(X, rank, iters, seed):
    """Plain-loop Lee-Seung updates from the same seeded uniform (0, 1] start."""
    rng = np.random.default_rng(seed)
    m, n = X.shape
    V = 1.0 - rng.random((m, rank))
    H = 1.0 - rng.random((rank, n))
    objs = [np.linalg.norm(X - V @ H, "fro") ** 2]
    for _ in range(iters):
        num = np.einsum("ik,ij->kj", V, X)
        den = np.einsum("ik,il,lj->kj", V, V, H) + 1e-12
        H = H * num / den
        num = np.einsum("ij,kj->ik", X, H)
        den = np.einsum("il,lj,kj->ik", V, H, H) + 1e-12
        V = V * num / den
        objs.append(np.linalg.norm(X - V @ H, "fro") ** 2)
    return V, H, objs


def nnls_by_enumeration(V, x):
    """Best objective over all supports whose unconstrained solution is non-negative."""
    k = V.shape[1]
    best = float(x @ x)
    for size in range(1, k + 1):
        for S in itertools.combinations(range(k), size):
            h, *_ = np.linalg.lstsq(V[:, S], x, rcond=None)
            if np.all(h >= 0):
                r = x - V[:, S] @ h
                best = min(best, float(r @ r))
    return best


# -- nmf ---------------------------------------------------------------------

def test_rank_one_exact():
    f = nmf(np.array([[2.0, 4.0], [1.0, 2.0]]), rank=1)
    assert f.final_objective <= 1e-10


def test_zero_matrix():
    f = nmf(np.zeros((4, 3)), rank=2)
    assert f.final_objective == 0.0
    assert np.all(f.H >= 0) and np.all(f.V >= 0)


def test_matches_reference_loop():
    X = np.random.default_rng(11).random((30, 40))
    f = nmf(X, rank=5, max_iters=60, tol=0.0, seed=3)
    V, H, objs = reference_mu(X, 5, f.iterations, seed=3)
    assert f.iterations == 60
    np.testing.assert_allclose(f.objective_history, objs, rtol=0, atol=1e-10)
    np.testing.assert_allclose(f.V, V, rtol=1e-9, atol=1e-12)


def test_init_range():
    V, H = nmf_init(10, 12, 3, seed=0)
    assert V.min() > 0 and V.max() <= 1 and H.min() > 0 and H.max() <= 1


@given(st.integers(0, 10**6), st.integers(1, 6))
def test_objective_non_increasing(seed, rank):
    X = np.random.default_rng(seed).random((12, 15))
    h = nmf(X, rank=rank, max_iters=40, tol=0.0, seed=seed).objective_history
    # with tol=0 the loop keeps going at the fixed point, where the summed
    # squared residual can wobble by a few ulps
    assert all(b <= a * (1 + 1e-13) for a, b in zip(h, h[1:]))


def test_bitwise_reproducible():
    X = np.random.default_rng(2).random((20, 25))
    a, b = nmf(X, 4, 50, seed=9), nmf(X, 4, 50, seed=9)
    assert a.V.tobytes() == b.V.tobytes() and a.H.tobytes() == b.H.tobytes()
    assert a.objective_history == b.objective_history


def test_factor_shapes_and_sign():
    X = np.random.default_rng(5).random((9, 14))
    f = nmf(X, 3, 30)
    assert f.V.shape == (9, 3) and f.H.shape == (3, 14) and f.rank == 3
    assert np.all(f.V >= 0) and np.all(f.H >= 0)


def test_tolerance_stops_early():
    X = np.random.default_rng(5).random((9, 14))
    f = nmf(X, 3, 5000, tol=1e-3)
    assert f.converged and f.iterations < 5000


def test_nmf_errors():
    with pytest.raises(DomainError):
        nmf(np.array([[1.0, -1.0]]), 1)
    with pytest.raises(ParameterError):
        nmf(np.ones((3, 4)), 4)
    with pytest.raises(ParameterError):
        nmf(np.ones((3, 4)), 0)


# -- nnls --------------------------------------------------------------------

def test_nnls_consistent_system():
    rng = np.random.default_rng(1)
    V = rng.random((20, 4))
    h0 = rng.random((4, 3))
    np.testing.assert_allclose(project_nnls(V @ h0, V), h0, atol=1e-6)


def test_nnls_identity_basis():
    X = np.random.default_rng(2).random((6, 5))
    np.testing.assert_allclose(project_nnls(X, np.eye(6)), X, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_nnls_matches_support_enumeration(seed):
    rng = np.random.default_rng(seed)
    V = rng.normal(size=(12, 6))
    x = rng.normal(size=12)
    h = project_nnls(x, V)[:, 0]
    r = x - V @ h
    assert float(r @ r) == pytest.approx(nnls_by_enumeration(V, x), rel=1e-10, abs=1e-12)


@given(st.integers(0, 10**6))
def test_nnls_kkt_and_feasible_comparisons(seed):
    rng = np.random.default_rng(seed)
    V = rng.random((15, 5))
    x = rng.random(15)
    h = project_nnls(x, V)[:, 0]
    grad = V.T @ (V @ h - x)
    assert np.all(h >= 0)
    assert np.all(grad >= -1e-8)
    assert np.abs(h * grad).max() <= 1e-8
    res = np.linalg.norm(x - V @ h)
    clipped = np.clip(np.linalg.lstsq(V, x, rcond=None)[0], 0, None)
    assert res <= np.linalg.norm(x) + 1e-12
    assert res <= np.linalg.norm(x - V @ clipped) + 1e-12


def test_nnls_shape_error():
    with pytest.raises(ShapeError):
        project_nnls(np.ones((4, 2)), np.ones((5, 3)))


# -- smoothing ---------------------------------------------------------------

def test_smooth_examples():
    H = np.array([[0.0, 0.0, 3.0, 0.0, 0.0]])
    np.testing.assert_allclose(smooth(H, 3), [[0, 1, 1, 1, 0]])
    np.testing.assert_array_equal(smooth(H, 1), H)
    np.testing.assert_allclose(smooth(np.full((2, 7), 4.2), 5), 4.2, rtol=1e-15)


def test_smooth_boundary_shrink_by_hand():
    row = np.array([1.0, 2.0, 6.0, 3.0])
    expected = [(1 + 2 + 6) / 3, (1 + 2 + 6 + 3) / 4, (1 + 2 + 6 + 3) / 4, (2 + 6 + 3) / 3]
    np.testing.assert_allclose(smooth(row, 5), expected)


def test_smooth_window_validation():
    with pytest.raises(ParameterError):
        smooth(np.ones((1, 4)), 2)
    with pytest.raises(ParameterError):
        smooth(np.ones((1, 4)), 0)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 30)),
                  elements=st.floats(0, 100)),
       st.sampled_from([1, 3, 5, 7, 21]))
def test_smooth_nonnegative_and_matches_loop(H, window):
    out = smooth(H, window)
    assert np.all(out >= 0)
    half = window // 2
    n = H.shape[1]
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        np.testing.assert_allclose(out[:, i], H[:, lo:hi].mean(axis=1), rtol=1e-9, atol=1e-9)
