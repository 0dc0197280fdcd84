import math
import tracemalloc

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import gaussian_mixture
from egograph.errors import (ApproximationError, ConditioningError, FormatError, LengthError,
                             ParameterError, SizeError)
from egograph.graph_spectrum import (ScaleParams, Spectrum, SpectrumParams, _sym_powers,
                                     compute_spectrum, dense_spectrum, local_scales,
                                     nystrom_spectrum, read_spc, weight, write_spc)


def match_up_to_sign(a, b):
    s = np.sign(np.sum(a * b, axis=0))
    s[s == 0] = 1
    return np.abs(a - b * s).max()


# -- weights and scales ------------------------------------------------------

def test_weight_examples():
    assert weight([1.0, 2.0], [1.0, 2.0], 0.7) == 1.0
    assert weight([0.0], [math.sqrt(2.0)], 2.0) == pytest.approx(math.exp(-1), rel=1e-15)
    assert weight([0.0, 0.0], [3.0, 4.0], 25.0) == pytest.approx(0.367879441171, rel=1e-12)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(1e-3, 1e3))
def test_weight_symmetric_in_unit_interval(a, b, tau):
    w = weight(a, b, tau)
    assert w == weight(b, a, tau)
    assert 0.0 <= w <= 1.0


def test_local_scales_line():
    np.testing.assert_array_equal(local_scales(np.array([[0.0], [1.0], [3.0]]), 1), [1, 1, 2])


def test_local_scales_duplicates_floored():
    np.testing.assert_array_equal(local_scales(np.ones((4, 2)), 1), 1e-12)


def test_local_scales_brute_force():
    P = np.random.default_rng(3).normal(size=(50, 4))
    oracle = []
    for i in range(50):
        d = sorted(math.dist(P[i], P[j]) for j in range(50) if j != i)
        oracle.append(d[6])
    np.testing.assert_allclose(local_scales(P, 7), oracle, rtol=1e-12)


def test_local_scales_sample_restricted():
    P = np.random.default_rng(4).normal(size=(30, 2))
    A = np.array([1, 4, 8, 15, 16, 22, 29])
    tau = local_scales(P, 3, A)
    for i in range(30):
        d = sorted(math.dist(P[i], P[j]) for j in A if j != i)
        assert tau[i] == pytest.approx(d[2], rel=1e-12)


def test_local_scales_k_too_large():
    with pytest.raises(ParameterError):
        local_scales(np.zeros((5, 1)) + np.arange(5)[:, None], 5)


def test_scale_params_validation():
    with pytest.raises(ParameterError):
        ScaleParams(mode="cosine")
    with pytest.raises(ParameterError):
        ScaleParams.fixed(0.0)
    with pytest.raises(ParameterError):
        ScaleParams.local(0)


# -- dense path --------------------------------------------------------------

def test_dense_two_nodes_symbolic():
    # L_s eigenvalues for W = [[1, w], [w, 1]] are 0 and 2w / (1 + w)
    for P, scales, w in [
        (np.zeros((2, 3)), ScaleParams.local(1), 1.0),
        (np.array([[0.0], [1.0]]), ScaleParams.local(1), math.exp(-1)),
        (np.array([[0.0], [2.0]]), ScaleParams.fixed(8.0), math.exp(-0.5)),
    ]:
        sp = dense_spectrum(P, scales, 2)
        np.testing.assert_allclose(sp.values, [0.0, 2 * w / (1 + w)], atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_dense_kernel_bounds_and_norms(seed):
    P = np.random.default_rng(seed).normal(size=(80, 3))
    sp = dense_spectrum(P, ScaleParams.local(5), 80)
    assert sp.values[0] <= 1e-10
    assert np.all(sp.values >= -1e-10) and np.all(sp.values <= 2 + 1e-10)
    assert np.all(np.diff(sp.values) >= 0)
    np.testing.assert_allclose(np.linalg.norm(sp.vectors, axis=0), 1.0, atol=1e-6)


def test_dense_size_guard():
    with pytest.raises(SizeError):
        dense_spectrum(np.zeros((5001, 1)), ScaleParams.fixed(1.0), 1)


# -- Nystrom -----------------------------------------------------------------

def test_full_sampling_matches_dense():
    P = np.random.default_rng(0).normal(size=(50, 3))
    P[:25] += 4.0
    sc = ScaleParams.local(7)
    ny = nystrom_spectrum(P, 50, 20, sc, seed=1)
    dn = dense_spectrum(P, sc, 20)
    np.testing.assert_allclose(ny.values, dn.values, rtol=0, atol=1e-8)
    assert match_up_to_sign(ny.vectors, dn.vectors) <= 1e-6


def test_two_separated_clusters_give_two_small_eigenvalues():
    rng = np.random.default_rng(2)
    P = np.vstack([rng.normal(size=(100, 2)), rng.normal(size=(100, 2)) + 50.0])
    sp = nystrom_spectrum(P, 60, 6, ScaleParams.local(5), seed=0)
    assert np.sum(sp.values < 1e-3) == 2


def test_nystrom_deterministic():
    P, _ = gaussian_mixture(5, n=120)
    a = nystrom_spectrum(P, 40, 10, ScaleParams.local(5), seed=3)
    b = nystrom_spectrum(P, 40, 10, ScaleParams.local(5), seed=3)
    assert a.vectors.tobytes() == b.vectors.tobytes() and a.values.tobytes() == b.values.tobytes()
    np.testing.assert_array_equal(a.sample_indices, b.sample_indices)


@pytest.mark.parametrize("seed", range(3))
def test_nystrom_invariants(seed):
    P, _ = gaussian_mixture(seed, n=300)
    sp = nystrom_spectrum(P, 60, 25, ScaleParams.local(10), seed=seed)
    assert sp.vectors.shape == (300, 25) and sp.n_sample == 60
    assert np.all(np.diff(sp.values) >= 0)
    assert np.all(sp.values >= 0) and np.all(sp.values <= 2 + 1e-6)
    assert len(np.unique(sp.sample_indices)) == 60


def test_nystrom_near_orthonormal_on_clustered_data():
    P, _ = gaussian_mixture(0, n=500)
    sp = nystrom_spectrum(P, 100, 10, ScaleParams.local(10), seed=0)
    assert np.linalg.norm(sp.vectors.T @ sp.vectors - np.eye(10), 2) <= 0.05


def test_landmark_only_strengths_differ():
    P, _ = gaussian_mixture(1, n=200)
    a = nystrom_spectrum(P, 50, 10, ScaleParams.local(10), seed=0)
    b = nystrom_spectrum(P, 50, 10, ScaleParams.local(10), seed=0, paper_literal_da=True)
    assert not np.allclose(a.values, b.values)
    assert np.all(np.isfinite(b.vectors))


def test_global_scaling_full_sampling():
    P = np.random.default_rng(6).normal(size=(40, 2))
    sc = ScaleParams.fixed(2.0)
    ny = nystrom_spectrum(P, 40, 8, sc, seed=0)
    np.testing.assert_allclose(ny.values, dense_spectrum(P, sc, 8).values, atol=1e-8)


def test_nystrom_parameter_checks():
    P = np.random.default_rng(0).normal(size=(20, 2))
    with pytest.raises(ParameterError):
        nystrom_spectrum(P, 10, 11, ScaleParams.local(3))
    with pytest.raises(ParameterError):
        nystrom_spectrum(P, 21, 5, ScaleParams.local(3))
    with pytest.raises(ParameterError):
        nystrom_spectrum(P, 5, 3, ScaleParams.local(5))


def test_nystrom_zero_strength_fails():
    # landmark and non-landmark points too far apart for any weight to survive
    P = np.arange(10.0)[:, None] * 100.0
    with pytest.raises(ApproximationError):
        nystrom_spectrum(P, 5, 2, ScaleParams.fixed(1.0), seed=0)


def test_sym_powers_rejects_null_matrix():
    with pytest.raises(ConditioningError):
        _sym_powers(np.zeros((3, 3)))


def test_sym_powers_values():
    M = np.array([[2.0, 1.0], [1.0, 2.0]])
    root, inv_root, inv = _sym_powers(M)
    np.testing.assert_allclose(root @ root, M, atol=1e-14)
    np.testing.assert_allclose(inv_root @ M @ inv_root, np.eye(2), atol=1e-14)
    np.testing.assert_allclose(inv @ M, np.eye(2), atol=1e-14)


def test_nystrom_memory_is_linear_in_n():
    P = np.random.default_rng(0).normal(size=(20000, 3))
    tracemalloc.start()
    nystrom_spectrum(P, 80, 10, ScaleParams.local(10), seed=0)
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    # a dense n x n float64 matrix would need 3.2 GB
    assert peak < 200e6


def test_compute_spectrum_clamps():
    P = np.random.default_rng(0).normal(size=(30, 2))
    sp = compute_spectrum(P, SpectrumParams(n_sample=400, n_eig=400, scales=ScaleParams.local(100)))
    assert sp.n_eig == 30 and sp.n_sample == 30


# -- SPC1 --------------------------------------------------------------------

@given(st.integers(1, 12), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_spc_roundtrip(tmp_path_factory, n, k, seed):
    rng = np.random.default_rng(seed)
    sp = Spectrum(vectors=rng.normal(size=(n, k)), values=np.sort(rng.random(k)))
    p = tmp_path_factory.mktemp("spc") / "s.spc"
    write_spc(sp, p)
    back = read_spc(p)
    assert back.vectors.tobytes() == sp.vectors.tobytes()
    assert back.values.tobytes() == sp.values.tobytes()


def test_spc_layout_and_errors(tmp_path):
    p = tmp_path / "s.spc"
    write_spc(Spectrum(vectors=np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]),
                       values=np.array([0.0, 0.5])), p)
    buf = p.read_bytes()
    assert buf[:4] == b"SPC1" and tuple(np.frombuffer(buf[4:12], "<u4")) == (3, 2)
    np.testing.assert_array_equal(np.frombuffer(buf[12:], "<f8"), [0, 0.5, 1, 3, 5, 2, 4, 6])
    p.write_bytes(buf[:-8])
    with pytest.raises(LengthError):
        read_spc(p)
    p.write_bytes(b"NOPE" + buf[4:])
    with pytest.raises(FormatError):
        read_spc(p)
