"""Frames, dense optical flow, and the Middlebury ``.flo`` format.

Frames are grayscale intensity grids in [0, 1]; flow fields hold a
per-pixel ``(u, v)`` displacement with ``u`` horizontal (column axis) and
``v`` vertical (row axis), both in pixels per frame.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.ndimage import convolve

from .errors import FormatError, LengthError, ParameterError, ParseError, ShapeError

CANONICAL_WIDTH = 1024
CANONICAL_HEIGHT = 576

FLO_MAGIC = 202021.25

# Horn-Schunck neighbourhood average (weights sum to 1, centre excluded).
_HS_KERNEL = np.array([[1 / 12, 1 / 6, 1 / 12],
                       [1 / 6, 0.0, 1 / 6],
                       [1 / 12, 1 / 6, 1 / 12]])


@dataclass
class Frame:
    """Grayscale image, ``data`` has shape (height, width) with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeError(f"frame must be 2-D, got shape {self.data.shape}")
        if self.height < 2 or self.width < 2:
            raise ShapeError(f"frame must be at least 2x2, got {self.width}x{self.height}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("frame intensities must lie in [0, 1]")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class FlowField:
    """Dense flow, ``uv`` has shape (height, width, 2)."""

    uv: np.ndarray

    def __post_init__(self):
        self.uv = np.asarray(self.uv)
        if self.uv.dtype not in (np.float32, np.float64):
            self.uv = self.uv.astype(np.float64)
        if self.uv.ndim != 3 or self.uv.shape[2] != 2:
            raise ShapeError(f"flow must have shape (h, w, 2), got {self.uv.shape}")

    @property
    def width(self) -> int:
        return self.uv.shape[1]

    @property
    def height(self) -> int:
        return self.uv.shape[0]

    @property
    def u(self) -> np.ndarray:
        return self.uv[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.uv[..., 1]


@dataclass(frozen=True)
class FlowParams:
    """Horn-Schunck settings.

    ``smoothness`` is the usual alpha; gradients are taken on 8-bit grey
    levels (intensity * 255) so the customary magnitude of alpha applies.
    """

    smoothness: float = 10.0
    iterations: int = 100
    convergence_tol: float = 1e-4

    def __post_init__(self):
        if self.smoothness <= 0:
            raise ParameterError("smoothness must be positive")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.convergence_tol <= 0:
            raise ParameterError("convergence_tol must be positive")


# --------------------------------------------------------------------------
# PGM frames


def _read_header_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of PGM header")
    return buf[start:pos], pos


def parse_pgm(buf: bytes) -> Frame:
    if buf[:2] != b"P5":
        raise ParseError(f"not a binary PGM (P5) file: magic {buf[:2]!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_header_token(buf, pos)
        if not tok.isdigit():
            raise ParseError(f"malformed PGM header field {tok!r}")
        fields.append(int(tok))
    width, height, maxval = fields
    if not 0 < maxval < 65536 or width < 1 or height < 1:
        raise ParseError(f"invalid PGM header values {fields}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ParseError("PGM header must end with a single whitespace byte")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(buf) - pos < need:
        raise LengthError(f"PGM pixel data truncated: need {need} bytes, have {len(buf) - pos}")
    pixels = np.frombuffer(buf, dtype=dtype, count=width * height, offset=pos)
    data = pixels.astype(np.float64).reshape(height, width) / maxval
    return Frame(np.clip(data, 0.0, 1.0))


def read_frame(path) -> Frame:
    """Read a binary PGM (P5) file, 8- or 16-bit, normalized by maxval."""
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def write_frame(frame: Frame, path, maxval: int = 255) -> None:
    """Write ``frame`` as binary PGM, quantizing to ``maxval`` levels."""
    q = np.rint(frame.data * maxval)
    if maxval > 255:
        payload = q.astype(">u2").tobytes()
    else:
        payload = q.astype(np.uint8).tobytes()
    header = f"P5\n{frame.width} {frame.height}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + payload)


def resize_frame(frame: Frame, target_w: int = CANONICAL_WIDTH,
                 target_h: int = CANONICAL_HEIGHT) -> Frame:
    """Bilinear resize using pixel-centre alignment and clamped edges.

    Output pixel ``x`` samples source coordinate ``(x + 0.5) * w / target_w - 0.5``,
    clamped to ``[0, w - 1]``; same for rows. Every output value is a convex
    combination of input values, so the input range is preserved.
    """
    if target_w < 2 or target_h < 2:
        raise ParameterError("resize target must be at least 2x2")
    h, w = frame.data.shape
    if (w, h) == (target_w, target_h):
        return Frame(frame.data.copy())

    def axis_weights(n_src, n_dst):
        pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        pos = np.clip(pos, 0.0, n_src - 1)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    x0, x1, fx = axis_weights(w, target_w)
    y0, y1, fy = axis_weights(h, target_h)
    img = frame.data
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return Frame(np.clip(out, 0.0, 1.0))


# --------------------------------------------------------------------------
# Horn-Schunck


def _central_diff(img: np.ndarray, axis: int) -> np.ndarray:
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 1)
    p = np.pad(img, pad, mode="edge")
    if axis == 1:
        return 0.5 * (p[:, 2:] - p[:, :-2])
    return 0.5 * (p[2:, :] - p[:-2, :])


def compute_flow(prev: Frame, next: Frame, params: FlowParams | None = None) -> FlowField:
    """Horn-Schunck flow from ``prev`` to ``next`` by Jacobi iteration.

    Spatial gradients are central differences averaged over both frames,
    with replicate-edge padding. The estimate is linear in the temporal
    difference, so swapping the frames negates the flow exactly.
    """
    params = params or FlowParams()
    if prev.data.shape != next.data.shape:
        raise ShapeError(f"frame shapes differ: {prev.data.shape} vs {next.data.shape}")
    i0 = prev.data * 255.0
    i1 = next.data * 255.0
    ix = 0.5 * (_central_diff(i0, 1) + _central_diff(i1, 1))
    iy = 0.5 * (_central_diff(i0, 0) + _central_diff(i1, 0))
    it = i1 - i0

    denom = params.smoothness ** 2 + ix * ix + iy * iy
    u = np.zeros_like(i0)
    v = np.zeros_like(i0)
    for _ in range(params.iterations):
        ubar = convolve(u, _HS_KERNEL, mode="nearest")
        vbar = convolve(v, _HS_KERNEL, mode="nearest")
        common = (ix * ubar + iy * vbar + it) / denom
        u_new = ubar - ix * common
        v_new = vbar - iy * common
        delta = max(np.abs(u_new - u).max(), np.abs(v_new - v).max())
        u, v = u_new, v_new
        if delta < params.convergence_tol:
            break
    return FlowField(np.stack([u, v], axis=-1))


# --------------------------------------------------------------------------
# Middlebury .flo


def write_flo(field: FlowField, path) -> None:
    header = np.array([FLO_MAGIC], dtype="<f4").tobytes()
    header += np.array([field.width, field.height], dtype="<i4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.uv, dtype="<f4").tobytes())


def read_flo(path) -> FlowField:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12:
        raise LengthError(f"flo file too short: {len(buf)} bytes")
    magic = np.frombuffer(buf, dtype="<f4", count=1)[0]
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"bad flo magic {magic!r}")
    width, height = (int(x) for x in np.frombuffer(buf, dtype="<i4", count=2, offset=4))
    if width < 1 or height < 1:
        raise FormatError(f"bad flo dimensions {width}x{height}")
    need = 12 + 8 * width * height
    if len(buf) != need:
        raise LengthError(f"flo size mismatch: expected {need} bytes, got {len(buf)}")
    uv = np.frombuffer(buf, dtype="<f4", offset=12).reshape(height, width, 2)
    return FlowField(uv.astype(np.float32))


# --------------------------------------------------------------------------
# Synthetic flow

_PATTERN_ARITY = {"translate": 2, "rotate": 1, "zoom": 1, "noise": 2}


def parse_pattern(text: str) -> tuple[str, tuple[float, ...]]:
    """Parse ``"rotate:0.05"``, ``"translate:1,0"``, ``"noise:1.0,7"`` etc."""
    m = re.fullmatch(r"\s*(\w+)\s*(?:[:(]\s*([^)]*?)\s*\)?)?\s*", text)
    if not m or m.group(1) not in _PATTERN_ARITY:
        raise ParseError(f"unknown flow pattern {text!r}")
    kind = m.group(1)
    args = tuple(float(a) for a in m.group(2).split(",")) if m.group(2) else ()
    if len(args) != _PATTERN_ARITY[kind]:
        raise ParseError(f"pattern {kind!r} takes {_PATTERN_ARITY[kind]} arguments, got {len(args)}")
    return kind, args


def _deterministic_field(kind, args, width, height) -> np.ndarray:
    uv = np.zeros((height, width, 2))
    if kind == "translate":
        uv[..., 0], uv[..., 1] = args
        return uv
    x = np.arange(width) - (width - 1) / 2.0
    y = np.arange(height) - (height - 1) / 2.0
    xx, yy = np.meshgrid(x, y)
    if kind == "rotate":
        (omega,) = args
        uv[..., 0] = -omega * yy
        uv[..., 1] = omega * xx
    elif kind == "zoom":
        (s,) = args
        uv[..., 0] = s * xx
        uv[..., 1] = s * yy
    return uv


def synth_flow(pattern, width: int, height: int) -> FlowField:
    """Generate a synthetic field.

    ``pattern`` is a pattern string or a ``(kind, args)`` pair: translate(u, v)
    is constant, rotate(omega) and zoom(s) act about the image centre, and
    noise(sigma, seed) draws i.i.d. Gaussian components.
    """
    if width < 2 or height < 2:
        raise ParameterError("synthetic field must be at least 2x2")
    kind, args = parse_pattern(pattern) if isinstance(pattern, str) else pattern
    if kind == "noise":
        sigma, seed = args
        rng = np.random.default_rng(int(seed))
        return FlowField(rng.normal(0.0, sigma, size=(height, width, 2)))
    return FlowField(_deterministic_field(kind, args, width, height))


def synthetic_sequence(pattern, n_fields: int, width: int = CANONICAL_WIDTH,
                       height: int = CANONICAL_HEIGHT, noise: float = 0.0,
                       seed: int = 0) -> Iterator[FlowField]:
    """Yield ``n_fields`` float32 fields: the pattern plus fresh Gaussian noise per field."""
    base = synth_flow(pattern, width, height).uv.astype(np.float32)
    # SFC64: noticeably faster than PCG64 for the ~1M normals drawn per field.
    rng = np.random.Generator(np.random.SFC64(seed))
    sigma = np.float32(noise)
    for _ in range(n_fields):
        if noise > 0:
            uv = rng.standard_normal(base.shape, dtype=np.float32)
            uv *= sigma
            uv += base
        else:
            uv = base.copy()
        yield FlowField(uv)


def flo_paths(directory) -> list[str]:
    """Sorted ``.flo`` files in ``directory``."""
    names = sorted(n for n in os.listdir(directory) if n.endswith(".flo"))
    return [os.path.join(directory, n) for n in names]


def frame_paths(directory) -> list[str]:
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".pgm"))
    return [os.path.join(directory, n) for n in names]
