"""Dimension reduction of descriptor columns and temporal smoothing.

``nmf`` runs Lee-Seung multiplicative updates for ``min ||X - VH||_F^2``
with ``V, H >= 0``. ``project_nnls`` reuses a fixed basis ``V`` for new
data, and ``smooth`` applies a centred moving average along each row.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .errors import DomainError, ParameterError, ShapeError

log = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class NmfFactors:
    V: np.ndarray
    H: np.ndarray
    objective_history: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    @property
    def final_objective(self) -> float:
        return self.objective_history[-1]

    @property
    def iterations(self) -> int:
        return len(self.objective_history) - 1


def _objective(X, V, H) -> float:
    R = X - V @ H
    return float(np.sum(R * R))


def nmf_init(m: int, n: int, rank: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform (0, 1] starting factors."""
    rng = np.random.default_rng(seed)
    V = 1.0 - rng.random((m, rank))
    H = 1.0 - rng.random((rank, n))
    return V, H


def nmf(X, rank: int = 50, max_iters: int = 500, tol: float = 1e-6, seed: int = 0) -> NmfFactors:
    """Factor ``X ~ V @ H`` with multiplicative updates.

    Each iteration updates ``H`` and then ``V``. The loop stops after
    ``max_iters`` iterations or once the relative objective change drops
    below ``tol``; ``objective_history[0]`` is the objective at the
    starting point.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"X must be 2-D, got shape {X.shape}")
    if np.any(X < 0):
        raise DomainError("NMF input has negative entries")
    m, n = X.shape
    if not 1 <= rank <= min(m, n):
        raise ParameterError(f"rank must lie in [1, {min(m, n)}], got {rank}")

    V, H = nmf_init(m, n, rank, seed)
    history = [_objective(X, V, H)]
    converged = False
    for _ in range(max_iters):
        H *= (V.T @ X) / (V.T @ V @ H + EPS)
        V *= (X @ H.T) / (V @ (H @ H.T) + EPS)
        obj = _objective(X, V, H)
        prev = history[-1]
        history.append(obj)
        if obj > prev:
            log.debug("NMF objective rose by %.3e", obj - prev)
        if obj == 0.0 or abs(prev - obj) <= tol * prev:
            converged = True
            break
    return NmfFactors(V=V, H=H, objective_history=history, converged=converged)


def project_nnls(X_new, V) -> np.ndarray:
    """Coefficients ``H_new >= 0`` minimizing ``||X_new - V H_new||_F`` column by column.

    Uses the Lawson-Hanson active-set solver from scipy.
    """
    X_new = np.asarray(X_new, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if X_new.ndim == 1:
        X_new = X_new[:, None]
    if V.ndim != 2 or X_new.ndim != 2 or X_new.shape[0] != V.shape[0]:
        raise ShapeError(f"cannot project {X_new.shape} onto basis {V.shape}")
    H = np.empty((V.shape[1], X_new.shape[1]))
    for j in range(X_new.shape[1]):
        H[:, j], _ = nnls(V, X_new[:, j])
    return H


def smooth(H, window: int) -> np.ndarray:
    """Centred moving average of each row; the window shrinks at the ends."""
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be a positive odd integer, got {window}")
    H = np.asarray(H, dtype=np.float64)
    squeeze = H.ndim == 1
    H2 = np.atleast_2d(H)
    n = H2.shape[1]
    if n < 1:
        raise ShapeError("cannot smooth an empty sequence")
    if window == 1:
        return H.copy()
    half = window // 2
    csum = np.concatenate([np.zeros((H2.shape[0], 1)), np.cumsum(H2, axis=1)], axis=1)
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    out = (csum[:, hi] - csum[:, lo]) / (hi - lo)
    return out[0] if squeeze else out
