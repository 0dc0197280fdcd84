"""Semi-supervised multiclass labeling with the graph MBO scheme.

The assignment ``u`` is an n x c matrix whose rows are one-hot after each
threshold. One outer iteration diffuses ``u`` for ``n_step`` semi-implicit
steps in the truncated eigenbasis ``Phi`` of the graph Laplacian,

    a <- (I + dt * Lambda)^{-1} (a - dt * eta * Phi^T M (u - f)),   u <- Phi a,

with ``dt = Delta_t / (2 n_step)``, and then snaps every row to the corner
of the simplex with the largest entry. The multi-well potential never
appears explicitly; thresholding stands in for its sharp-interface limit.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, SamplingError, ShapeError
from .graph_spectrum import Spectrum, SpectrumParams, compute_spectrum

log = logging.getLogger(__name__)


@dataclass
class LabelData:
    """Fidelity labels: ``fidelity[i]`` is the known class of node i, or -1."""

    n_classes: int
    fidelity: np.ndarray

    def __post_init__(self):
        self.fidelity = np.asarray(self.fidelity, dtype=np.int64)
        if self.n_classes < 1:
            raise ParameterError("need at least one class")
        if np.any(self.fidelity >= self.n_classes) or np.any(self.fidelity < -1):
            raise ParameterError("fidelity labels must be -1 or lie in [0, n_classes)")

    @classmethod
    def from_indices(cls, n: int, n_classes: int, indices, classes) -> "LabelData":
        fid = np.full(n, -1, dtype=np.int64)
        fid[np.asarray(indices, dtype=np.intp)] = classes
        return cls(n_classes, fid)

    @property
    def n(self) -> int:
        return len(self.fidelity)

    @property
    def mask(self) -> np.ndarray:
        return self.fidelity >= 0

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def one_hot(self) -> np.ndarray:
        """The n x c matrix ``f``; rows of non-fidelity nodes are zero."""
        f = np.zeros((self.n, self.n_classes))
        idx = self.indices
        f[idx, self.fidelity[idx]] = 1.0
        return f

    def subset(self, start: int, stop: int) -> "LabelData":
        return LabelData(self.n_classes, self.fidelity[start:stop])


@dataclass(frozen=True)
class MboParams:
    eta: float = 300.0
    dt: float = 0.1
    n_step: int = 10
    max_iter: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0:
            raise ParameterError("eta must be >= 0")
        if self.dt <= 0:
            raise ParameterError("dt must be positive")
        if self.n_step < 1 or self.max_iter < 1:
            raise ParameterError("n_step and max_iter must be >= 1")

    @property
    def inner_dt(self) -> float:
        return self.dt / (2 * self.n_step)


@dataclass
class MboResult:
    u: np.ndarray
    iterations: int
    changed: list[int] = field(default_factory=list)
    converged: bool = False

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.u, axis=1)


def sample_fidelity(truth, fraction: float, seed: int = 0, n_classes: int | None = None,
                    candidates=None) -> LabelData:
    """Pick ``max(1, round(fraction * count))`` fidelity nodes from every class.

    ``candidates`` optionally restricts sampling to a subset of nodes (a
    training split); each class must still have at least one candidate.
    """
    if not 0 < fraction <= 1:
        raise ParameterError(f"fraction must lie in (0, 1], got {fraction}")
    truth = np.asarray(truth, dtype=np.int64)
    if n_classes is None:
        n_classes = int(truth.max()) + 1
    pool = np.ones(len(truth), dtype=bool)
    if candidates is not None:
        pool[:] = False
        pool[np.asarray(candidates, dtype=np.intp)] = True
    rng = np.random.default_rng(seed)
    fid = np.full(len(truth), -1, dtype=np.int64)
    for c in range(n_classes):
        members = np.flatnonzero((truth == c) & pool)
        if len(members) == 0:
            raise SamplingError(f"class {c} has no members to sample fidelity from")
        k = max(1, int(np.floor(fraction * len(members) + 0.5)))
        fid[rng.choice(members, size=min(k, len(members)), replace=False)] = c
    return LabelData(n_classes, fid)


def initialize(labels: LabelData, n: int | None = None, seed: int = 0) -> np.ndarray:
    """Random one-hot rows, with fidelity rows set to their labels."""
    n = labels.n if n is None else n
    if n != labels.n:
        raise ShapeError(f"label data covers {labels.n} nodes, asked for {n}")
    rng = np.random.default_rng(seed)
    u = np.zeros((n, labels.n_classes))
    u[np.arange(n), rng.integers(0, labels.n_classes, size=n)] = 1.0
    idx = labels.indices
    u[idx] = 0.0
    u[idx, labels.fidelity[idx]] = 1.0
    return u


def diffuse(u, spectrum: Spectrum, labels: LabelData, params: MboParams) -> np.ndarray:
    """Run ``n_step`` semi-implicit steps of the forced heat equation; returns the pre-threshold u."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape[0] != spectrum.n or u.shape != (labels.n, labels.n_classes):
        raise ShapeError(f"u has shape {u.shape}, spectrum n={spectrum.n}, "
                         f"labels cover {labels.n} nodes x {labels.n_classes} classes")
    Phi = spectrum.vectors
    dt = params.inner_dt
    damp = 1.0 / (1.0 + dt * spectrum.values)[:, None]
    mask = labels.mask[:, None]
    f = labels.one_hot()
    forcing = dt * params.eta
    a = Phi.T @ u
    for _ in range(params.n_step):
        a = damp * (a - forcing * (Phi.T @ (mask * (u - f))))
        u = Phi @ a
    return u


def threshold(u) -> np.ndarray:
    """One-hot of the row-wise argmax; ties go to the lowest class index."""
    u = np.asarray(u)
    out = np.zeros(u.shape)
    out[np.arange(u.shape[0]), np.argmax(u, axis=1)] = 1.0
    return out


def mbo_classify(spectrum: Spectrum, labels: LabelData, params: MboParams, u0=None) -> MboResult:
    """Alternate diffusion and thresholding until no label changes or ``max_iter``.

    Non-convergence is reported through ``converged=False``; the last
    iterate is returned either way.
    """
    if not labels.mask.any():
        raise SamplingError("MBO needs at least one fidelity node")
    u = initialize(labels, spectrum.n, params.seed) if u0 is None else threshold(u0)
    current = np.argmax(u, axis=1)
    changed = []
    for it in range(1, params.max_iter + 1):
        u = threshold(diffuse(u, spectrum, labels, params))
        new = np.argmax(u, axis=1)
        changed.append(int(np.count_nonzero(new != current)))
        current = new
        if changed[-1] == 0:
            return MboResult(u=u, iterations=it, changed=changed, converged=True)
    log.warning("MBO did not converge in %d iterations (%d labels still changing)",
                params.max_iter, changed[-1])
    return MboResult(u=u, iterations=params.max_iter, changed=changed, converged=False)


def energy_terms(u, spectrum: Spectrum, labels: LabelData, eta: float) -> tuple[float, float]:
    """Return ``(dirichlet, fidelity)``: ``0.5 * sum_j lambda_j ||a_j||^2`` and ``eta/2 * ||M(u - f)||^2``."""
    u = np.asarray(u, dtype=np.float64)
    a = spectrum.vectors.T @ u
    dirichlet = 0.5 * float(np.sum(spectrum.values * np.sum(a * a, axis=1)))
    r = labels.mask[:, None] * (u - labels.one_hot())
    return dirichlet, 0.5 * eta * float(np.sum(r * r))


def energy(u, spectrum: Spectrum, labels: LabelData, eta: float) -> float:
    return sum(energy_terms(u, spectrum, labels, eta))


# --------------------------------------------------------------------------
# batching


def batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    if batch_size < 2:
        raise ParameterError("batch_size must be >= 2")
    return [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]


@dataclass
class BatchResult:
    start: int
    stop: int
    spectrum: Spectrum
    result: MboResult


@dataclass
class BatchedClassification:
    u: np.ndarray
    batches: list[BatchResult]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.u, axis=1)

    @property
    def converged(self) -> bool:
        return all(b.result.converged for b in self.batches)


def classify_batched(points, labels: LabelData, batch_size: int,
                     spectrum_params: SpectrumParams, mbo_params: MboParams) -> BatchedClassification:
    """Classify contiguous batches independently and concatenate the results.

    Batch ``b`` uses seeds offset by ``b`` so that a single batch reproduces
    an unbatched run exactly.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) != labels.n:
        raise ShapeError(f"{len(points)} feature rows but labels cover {labels.n} nodes")
    present = set(np.unique(labels.fidelity[labels.mask]).tolist())
    u = np.zeros((labels.n, labels.n_classes))
    batches = []
    for b, (start, stop) in enumerate(batch_bounds(labels.n, batch_size)):
        sub = labels.subset(start, stop)
        missing = present - set(np.unique(sub.fidelity[sub.mask]).tolist())
        if missing:
            warnings.warn(f"batch {b} [{start}, {stop}) has no fidelity nodes for classes "
                          f"{sorted(missing)}; their recall in this batch may collapse")
        sp = SpectrumParams(spectrum_params.n_sample, spectrum_params.n_eig,
                            spectrum_params.scales, spectrum_params.seed + b,
                            spectrum_params.paper_literal_da)
        spectrum = compute_spectrum(points[start:stop], sp)
        mp = MboParams(mbo_params.eta, mbo_params.dt, mbo_params.n_step,
                       mbo_params.max_iter, mbo_params.seed + b)
        result = mbo_classify(spectrum, sub, mp)
        u[start:stop] = result.u
        batches.append(BatchResult(start, stop, spectrum, result))
    return BatchedClassification(u=u, batches=batches)


# --------------------------------------------------------------------------
# CSV files


def write_labels_csv(path, classes, indices=None) -> None:
    """``segment_index,class_id`` with LF line endings."""
    classes = np.asarray(classes, dtype=np.int64)
    indices = np.arange(len(classes)) if indices is None else np.asarray(indices, dtype=np.int64)
    with open(path, "w", newline="") as fh:
        fh.write("segment_index,class_id\n")
        for i, c in zip(indices.tolist(), classes.tolist()):
            fh.write(f"{i},{c}\n")


def read_labels_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["segment_index", "class_id"]:
            raise ValueError(f"{path}: expected header segment_index,class_id, got {header}")
        rows = [(int(a), int(b)) for a, b in reader]
    if not rows:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    idx, cls = zip(*rows)
    return np.array(idx, dtype=np.int64), np.array(cls, dtype=np.int64)


def write_diagnostics_csv(path, changed) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("iteration,changed\n")
        for i, c in enumerate(changed, start=1):
            fh.write(f"{i},{c}\n")
