"""Octant histograms of flow directions over dx x dy x dt cuboids.

Each segment of ``dt`` consecutive flow fields becomes one column of the
descriptor matrix ``X``: for every spatial cell ``(j, k)`` (``j`` along the
width, ``k`` along the height) eight counts, one per direction octant,
laid out as ``(j * s_y + k) * 8 + bin``.

Octant ``b`` holds angles in ``[b*pi/4, (b+1)*pi/4)`` where the angle is
``atan2(v, u)`` mapped into ``[0, 2*pi)``. The bin is found with exact
sign/magnitude comparisons instead of a rounded arctangent, so vectors on a
boundary (e.g. ``(1, 1)``) land in the upper bin as the floor rule demands.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numba
import numpy as np

from .errors import EmptyOutputError, FormatError, LengthError, ParameterError, ShapeError
from .flow_field import FlowField

N_BINS = 8
GMD_MAGIC = b"GMD1"


@dataclass(frozen=True)
class DescriptorConfig:
    dx: int = 64
    dy: int = 64
    dt: int = 60
    fps: float = 30.0
    zero_threshold: float = 1e-6

    def __post_init__(self):
        if self.dx < 1 or self.dy < 1 or self.dt < 1:
            raise ParameterError("dx, dy, dt must be >= 1")
        if self.zero_threshold < 0:
            raise ParameterError("zero_threshold must be >= 0")
        if self.fps <= 0:
            raise ParameterError("fps must be positive")

    @property
    def segment_seconds(self) -> float:
        return self.dt / self.fps

    def grid(self, width: int, height: int) -> tuple[int, int]:
        """Return ``(s_x, s_y)`` for a ``width`` x ``height`` field."""
        if width % self.dx or height % self.dy:
            raise ShapeError(
                f"field {width}x{height} not divisible into {self.dx}x{self.dy} cells")
        return width // self.dx, height // self.dy

    def n_rows(self, width: int, height: int) -> int:
        sx, sy = self.grid(width, height)
        return sx * sy * N_BINS


def bin_of(u: float, v: float, zero_threshold: float = 1e-6) -> int | None:
    """Octant index of the vector ``(u, v)``, or None if shorter than ``zero_threshold``."""
    if u * u + v * v < zero_threshold * zero_threshold:
        return None
    low = v < 0 or (v == 0 and u < 0)
    if low:
        u, v = -u, -v
    left = u <= 0 and v > 0
    if left:
        u, v = v, -u
    return 4 * low + 2 * left + (v >= u and v > 0)


@numba.njit(cache=True, nogil=True)
def _accumulate(uv, dx, dy, thr2, out):
    h, w, _ = uv.shape
    sx = w // dx
    sy = h // dy
    for k in range(sy):
        for y in range(k * dy, (k + 1) * dy):
            for j in range(sx):
                base = (j * sy + k) * 8
                for x in range(j * dx, (j + 1) * dx):
                    u = uv[y, x, 0]
                    v = uv[y, x, 1]
                    # branch-free form of bin_of: fold the lower half-plane
                    # onto the upper, then the left quadrant onto the right
                    low = (v < 0) | ((v == 0) & (u < 0))
                    s = -1.0 if low else 1.0
                    u1 = s * u
                    v1 = s * v
                    q = (u1 <= 0) & (v1 > 0)
                    u2 = v1 if q else u1
                    v2 = -u1 if q else v1
                    r = (v2 >= u2) & (v2 > 0)
                    keep = u * u + v * v >= thr2
                    out[base + 4 * low + 2 * q + r] += keep


def _check_fields(fields: Sequence[FlowField], cfg: DescriptorConfig) -> tuple[int, int]:
    if not fields:
        raise EmptyOutputError("no flow fields given")
    h, w = fields[0].height, fields[0].width
    for f in fields:
        if (f.height, f.width) != (h, w):
            raise ShapeError(f"flow field {f.width}x{f.height} differs from {w}x{h}")
    cfg.grid(w, h)
    return w, h


def _counts(fields: Sequence[FlowField], cfg: DescriptorConfig, w: int, h: int) -> np.ndarray:
    counts = np.zeros(cfg.n_rows(w, h), dtype=np.int64)
    thr2 = float(cfg.zero_threshold) ** 2
    for f in fields:
        _accumulate(np.ascontiguousarray(f.uv), cfg.dx, cfg.dy, thr2, counts)
    return counts


def segment_histogram(fields: Sequence[FlowField], cfg: DescriptorConfig) -> np.ndarray:
    """Histogram of one segment as a float vector of length ``s_x * s_y * 8``."""
    w, h = _check_fields(fields, cfg)
    return _counts(fields, cfg, w, h).astype(np.float64)


def build_descriptor_matrix(fields: Iterable[FlowField], cfg: DescriptorConfig) -> np.ndarray:
    """Stack per-segment histograms into ``X`` (bins x segments).

    ``fields`` may be any iterable, it is consumed ``dt`` fields at a time so
    long sequences never need to be held in memory. Trailing fields that do
    not fill a whole segment are dropped.
    """
    columns = []
    chunk: list[FlowField] = []
    shape = None
    for f in fields:
        if shape is None:
            shape = (f.height, f.width)
        elif (f.height, f.width) != shape:
            raise ShapeError(f"flow field {f.width}x{f.height} differs from {shape[1]}x{shape[0]}")
        chunk.append(f)
        if len(chunk) == cfg.dt:
            columns.append(segment_histogram(chunk, cfg))
            chunk = []
    if not columns:
        raise EmptyOutputError(f"need at least dt={cfg.dt} flow fields, got {len(chunk)}")
    return np.stack(columns, axis=1)


# --------------------------------------------------------------------------
# GMD1 matrix files (also used for NMF factors)


def write_gmd(matrix: np.ndarray, path) -> None:
    """Write a 2-D matrix: magic, u32 rows, u32 cols, column-major f64 LE."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"GMD1 stores 2-D matrices, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(GMD_MAGIC + struct.pack("<II", *m.shape))
        fh.write(m.astype("<f8").tobytes(order="F"))


def read_gmd(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != GMD_MAGIC:
        raise FormatError(f"bad GMD1 magic {buf[:4]!r}")
    if len(buf) < 12:
        raise LengthError("GMD1 header truncated")
    rows, cols = struct.unpack("<II", buf[4:12])
    if len(buf) != 12 + 8 * rows * cols:
        raise LengthError(f"GMD1 size mismatch for {rows}x{cols}: {len(buf)} bytes")
    data = np.frombuffer(buf, dtype="<f8", offset=12)
    return np.array(data.reshape(cols, rows).T, dtype=np.float64, order="C")


def write_matrix_csv(matrix: np.ndarray, path) -> None:
    """CSV export, one matrix row per line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(matrix):
            writer.writerow(repr(float(x)) for x in row)
