"""Similarity graph and spectrum of the symmetric normalized Laplacian.

Nodes are feature vectors (rows of ``points``). Edge weights are
``exp(-||h_i - h_j||^2 / tau_ij)`` with either a global ``tau`` or local
scaling ``tau_ij = tau_i * tau_j``, where ``tau_i`` is the distance to the
K-th nearest neighbour. Self weights are 1.

``nystrom_spectrum`` approximates the leading eigenpairs of
``L_s = I - D^{-1/2} W D^{-1/2}`` from a uniformly sampled landmark set and
never forms an n x n matrix. ``dense_spectrum`` builds the full Laplacian
and is meant as a reference for small n.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist

from .errors import (ApproximationError, ConditioningError, FormatError, LengthError,
                     ParameterError, ShapeError, SizeError)

TAU_FLOOR = 1e-12
EIG_FLOOR = 1e-10
DENSE_MAX_N = 5000
SPC_MAGIC = b"SPC1"

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScaleParams:
    """Kernel bandwidth: ``mode`` is "local" (uses ``knn``) or "global" (uses ``tau``)."""

    mode: str = "local"
    tau: float = 1.0
    knn: int = 10

    def __post_init__(self):
        if self.mode not in ("local", "global"):
            raise ParameterError(f"unknown scale mode {self.mode!r}")
        if self.mode == "global" and self.tau <= 0:
            raise ParameterError("global tau must be positive")
        if self.mode == "local" and self.knn < 1:
            raise ParameterError("knn must be >= 1")

    @classmethod
    def local(cls, knn: int) -> "ScaleParams":
        return cls(mode="local", knn=knn)

    @classmethod
    def fixed(cls, tau: float) -> "ScaleParams":
        return cls(mode="global", tau=tau)


@dataclass(frozen=True)
class SpectrumParams:
    n_sample: int = 400
    n_eig: int = 400
    scales: ScaleParams = ScaleParams()
    seed: int = 0
    paper_literal_da: bool = False


@dataclass
class Spectrum:
    """Leading eigenpairs: ``vectors`` is n x n_eig, ``values`` ascending."""

    vectors: np.ndarray
    values: np.ndarray
    sample_indices: np.ndarray | None = None
    tau: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_eig(self) -> int:
        return self.vectors.shape[1]

    @property
    def n_sample(self) -> int:
        return self.n if self.sample_indices is None else len(self.sample_indices)


def weight(h_i, h_j, tau_ij: float) -> float:
    """Gaussian similarity of two feature vectors."""
    d = np.asarray(h_i, dtype=np.float64) - np.asarray(h_j, dtype=np.float64)
    return float(np.exp(-np.dot(d, d) / tau_ij))


def _as_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2:
        raise ShapeError(f"features must be a 2-D (n, dim) array, got shape {P.shape}")
    if P.shape[0] < 2:
        raise ShapeError("need at least two data points")
    if not np.all(np.isfinite(P)):
        raise ValueError("features contain non-finite values")
    return P


def local_scales(points, knn: int, sample_indices=None) -> np.ndarray:
    """Distance from every node to its ``knn``-th nearest neighbour within the sample set.

    A node that belongs to the sample set does not count as its own
    neighbour. Zero distances (duplicate points) are floored at 1e-12.
    """
    P = _as_points(points)
    n = P.shape[0]
    A = np.arange(n) if sample_indices is None else np.asarray(sample_indices, dtype=np.intp)
    if not 1 <= knn < len(A):
        raise ParameterError(f"knn={knn} must satisfy 1 <= knn < {len(A)} sampled nodes")
    dist = cdist(P, P[A])
    dist[A, np.arange(len(A))] = np.inf
    kth = np.partition(dist, knn - 1, axis=1)[:, knn - 1]
    return np.maximum(kth, TAU_FLOOR)


def _kernel(Pa, Pb, tau_a, tau_b, scales: ScaleParams) -> np.ndarray:
    sq = cdist(Pa, Pb, "sqeuclidean")
    if scales.mode == "global":
        return np.exp(-sq / scales.tau)
    return np.exp(-sq / np.outer(tau_a, tau_b))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # make the largest-magnitude entry of each column positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def dense_spectrum(points, scales: ScaleParams, n_eig: int, tau=None) -> Spectrum:
    """Exact leading ``n_eig`` eigenpairs of the full symmetric Laplacian.

    With local scaling the K-nearest-neighbour search runs over all nodes,
    unless per-node scales are supplied through ``tau``.
    """
    P = _as_points(points)
    n = P.shape[0]
    if n > DENSE_MAX_N:
        raise SizeError(f"dense spectrum limited to n <= {DENSE_MAX_N}, got {n}")
    if not 1 <= n_eig <= n:
        raise ParameterError(f"n_eig must lie in [1, {n}]")
    if scales.mode == "local" and tau is None:
        tau = local_scales(P, scales.knn)
    W = _kernel(P, P, tau, tau, scales)
    d = W.sum(axis=1)
    s = 1.0 / np.sqrt(d)
    L = np.eye(n) - s[:, None] * W * s[None, :]
    L = 0.5 * (L + L.T)
    values, vectors = eigh(L, subset_by_index=[0, n_eig - 1])
    return Spectrum(vectors=_fix_signs(vectors), values=values,
                    tau=None if tau is None else np.asarray(tau, dtype=np.float64))


def _sym_powers(M: np.ndarray):
    """Return ``(M^{1/2}, M^{-1/2}, M^{-1})`` with eigenvalues below EIG_FLOOR dropped from the inverses."""
    g, Q = eigh(M)
    keep = g > EIG_FLOOR
    if not keep.any():
        raise ConditioningError("sampled weight block has no eigenvalue above the floor")
    root = np.sqrt(np.clip(g, 0.0, None))
    inv_root = np.where(keep, 1.0 / np.sqrt(np.where(keep, g, 1.0)), 0.0)
    inv = inv_root ** 2
    return (Q * root) @ Q.T, (Q * inv_root) @ Q.T, (Q * inv) @ Q.T


def nystrom_spectrum(points, n_sample: int, n_eig: int, scales: ScaleParams,
                     seed: int = 0, paper_literal_da: bool = False) -> Spectrum:
    """Nystrom approximation of the ``n_eig`` smallest eigenpairs of ``L_s``.

    ``n_sample`` landmarks are drawn uniformly without replacement. Local
    scales are measured against the landmarks only. Node strengths of the
    landmarks include their weights to the other nodes unless
    ``paper_literal_da`` is set, in which case only landmark-landmark
    weights are summed.
    """
    P = _as_points(points)
    n = P.shape[0]
    if not 1 <= n_eig <= n_sample <= n:
        raise ParameterError(f"need 1 <= n_eig ({n_eig}) <= n_sample ({n_sample}) <= n ({n})")

    rng = np.random.default_rng(seed)
    A = rng.choice(n, size=n_sample, replace=False)
    in_a = np.zeros(n, dtype=bool)
    in_a[A] = True
    B = np.flatnonzero(~in_a)

    tau = local_scales(P, scales.knn, A) if scales.mode == "local" else np.full(n, scales.tau)
    W_AA = _kernel(P[A], P[A], tau[A], tau[A], scales)
    W_AB = _kernel(P[A], P[B], tau[A], tau[B], scales)

    _, _, W_AA_inv = _sym_powers(W_AA)
    row_ab = W_AB.sum(axis=1)
    d_A = W_AA.sum(axis=1) if paper_literal_da else W_AA.sum(axis=1) + row_ab
    d_B = W_AB.sum(axis=0) + W_AB.T @ (W_AA_inv @ row_ab)
    if np.any(d_A <= 0) or np.any(d_B <= 0):
        raise ApproximationError("Nystrom strength estimate is non-positive; increase n_sample")

    sA = 1.0 / np.sqrt(d_A)
    sB = 1.0 / np.sqrt(d_B)
    N_AA = sA[:, None] * W_AA * sA[None, :]
    N_AB = sA[:, None] * W_AB * sB[None, :]

    root, inv_root, _ = _sym_powers(N_AA)
    R = inv_root @ N_AB
    S = N_AA + R @ R.T
    S = 0.5 * (S + S.T)
    xi, psi = eigh(S, subset_by_index=[n_sample - n_eig, n_sample - 1])
    xi, psi = xi[::-1], psi[:, ::-1]
    good = xi > EIG_FLOOR
    if not good.any():
        raise ConditioningError("no positive Nystrom eigenvalue; raise n_sample")
    if not good.all():
        log.info("Nystrom: %d of %d eigenvalues below %.0e, their vectors are zeroed",
                 int((~good).sum()), n_eig, EIG_FLOOR)
    # numerically null directions carry no usable eigenvector; zero them so
    # they drop out of the diffusion instead of amplifying round-off
    scale = np.where(good, psi / np.sqrt(np.where(good, xi, 1.0)), 0.0)
    vectors = np.empty((n, n_eig))
    vectors[A] = root @ scale
    vectors[B] = N_AB.T @ (inv_root @ scale)
    # the extension can push xi a hair past 1; L_s itself lives in [0, 2]
    values = np.clip(1.0 - xi, 0.0, 2.0)
    return Spectrum(vectors=_fix_signs(vectors), values=values,
                    sample_indices=np.sort(A), tau=tau)


def compute_spectrum(points, params: SpectrumParams) -> Spectrum:
    """Nystrom spectrum with ``n_sample``/``n_eig``/``knn`` clamped to what ``points`` can support."""
    n = len(points)
    n_sample = min(params.n_sample, n)
    n_eig = min(params.n_eig, n_sample)
    scales = params.scales
    if scales.mode == "local" and scales.knn >= n_sample:
        scales = ScaleParams.local(max(1, n_sample - 1))
    return nystrom_spectrum(points, n_sample, n_eig, scales, params.seed, params.paper_literal_da)


# --------------------------------------------------------------------------
# SPC1 files


def write_spc(spectrum: Spectrum, path) -> None:
    """Magic, u32 n, u32 n_eig, eigenvalues f64 LE, then vectors column-major f64 LE."""
    with open(path, "wb") as fh:
        fh.write(SPC_MAGIC + struct.pack("<II", spectrum.n, spectrum.n_eig))
        fh.write(np.asarray(spectrum.values, dtype="<f8").tobytes())
        fh.write(np.asarray(spectrum.vectors, dtype="<f8").tobytes(order="F"))


def read_spc(path) -> Spectrum:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != SPC_MAGIC:
        raise FormatError(f"bad SPC1 magic {buf[:4]!r}")
    if len(buf) < 12:
        raise LengthError("SPC1 header truncated")
    n, k = struct.unpack("<II", buf[4:12])
    if len(buf) != 12 + 8 * k + 8 * n * k:
        raise LengthError(f"SPC1 size mismatch for n={n}, n_eig={k}")
    values = np.frombuffer(buf, dtype="<f8", count=k, offset=12).astype(np.float64)
    vecs = np.frombuffer(buf, dtype="<f8", offset=12 + 8 * k).reshape(k, n).T
    return Spectrum(vectors=np.array(vecs, dtype=np.float64, order="C"), values=values)
