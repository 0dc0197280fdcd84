"""Classification metrics and figure files (segment strips, confusion images)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from .errors import EmptyOutputError, FormatError, ParameterError, ShapeError

SEGMENT_PLOT_HEIGHT = 20
CELL_SIZE = 16


@dataclass
class EvaluationReport:
    """Metrics for one labeling.

    ``confusion[k, l]`` counts segments of true class k predicted as l.
    Precision/recall with an empty denominator are 0 and flagged in
    ``precision_undefined`` / ``recall_undefined``.
    """

    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    precision_undefined: np.ndarray
    recall_undefined: np.ndarray
    eval_classes: tuple[int, ...]
    mean_precision: float
    mean_recall: float
    accuracy: float

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self, class_names: Sequence[str] | None = None) -> dict:
        out = {
            "confusion": self.confusion.tolist(),
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "precision_undefined": self.precision_undefined.tolist(),
            "recall_undefined": self.recall_undefined.tolist(),
            "eval_classes": list(self.eval_classes),
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "accuracy": self.accuracy,
            "segments": self.total,
        }
        if class_names is not None:
            out["class_names"] = list(class_names)
        return out


def confusion_matrix(pred, truth, n_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ShapeError(f"prediction shape {pred.shape} does not match truth shape {truth.shape}")
    for name, arr in (("prediction", pred), ("truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ParameterError(f"{name} labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def report_from_confusion(confusion, eval_classes=None) -> EvaluationReport:
    cm = np.asarray(confusion, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {cm.shape}")
    c = cm.shape[0]
    eval_classes = tuple(range(c)) if eval_classes is None else tuple(int(k) for k in eval_classes)
    if any(not 0 <= k < c for k in eval_classes):
        raise ParameterError(f"eval_classes must lie in [0, {c})")
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    p_undef = predicted == 0
    r_undef = actual == 0
    precision = np.where(p_undef, 0.0, tp / np.where(p_undef, 1, predicted))
    recall = np.where(r_undef, 0.0, tp / np.where(r_undef, 1, actual))
    idx = list(eval_classes)
    total = cm.sum()
    return EvaluationReport(
        confusion=cm, precision=precision, recall=recall,
        precision_undefined=p_undef, recall_undefined=r_undef,
        eval_classes=eval_classes,
        mean_precision=float(np.mean(precision[idx])) if idx else 0.0,
        mean_recall=float(np.mean(recall[idx])) if idx else 0.0,
        accuracy=float(tp.sum() / total) if total else 0.0,
    )


def evaluate(pred, truth, n_classes: int | None = None, eval_classes=None) -> EvaluationReport:
    """Confusion over all classes; means over ``eval_classes`` (default: all)."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ShapeError(f"{pred.shape[0] if pred.ndim else 0} predictions "
                         f"for {truth.shape[0] if truth.ndim else 0} truth labels")
    if n_classes is None:
        n_classes = int(max(pred.max(initial=-1), truth.max(initial=-1))) + 1
    return report_from_confusion(confusion_matrix(pred, truth, n_classes), eval_classes)


# --------------------------------------------------------------------------
# images


def default_palette() -> np.ndarray:
    text = resources.files("egograph").joinpath("data/palette.json").read_text()
    return np.asarray(json.loads(text), dtype=np.uint8)


def load_palette(path=None) -> np.ndarray:
    if path is None:
        return default_palette()
    with open(path) as fh:
        pal = np.asarray(json.load(fh))
    if pal.ndim != 2 or pal.shape[1] != 3 or pal.min() < 0 or pal.max() > 255:
        raise FormatError(f"{path}: palette must be a list of [r, g, b] triples in 0..255")
    return pal.astype(np.uint8)


def write_ppm(image: np.ndarray, path) -> None:
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an (h, w, 3) image, got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 image with maxval 255."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos)
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise FormatError(f"{path}: only 8-bit P6 images are supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = buf[pos + 1:]
    if len(data) != w * h * 3:
        raise FormatError(f"{path}: expected {w * h * 3} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()


def segment_image(pred, palette=None, height: int = SEGMENT_PLOT_HEIGHT, truth=None) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    if pred.size == 0:
        raise EmptyOutputError("no segments to plot")
    if height < 1:
        raise ParameterError("plot height must be >= 1")
    palette = default_palette() if palette is None else np.asarray(palette, dtype=np.uint8)
    rows = [pred]
    if truth is not None:
        truth = np.asarray(truth, dtype=np.int64)
        if truth.shape != pred.shape:
            raise ShapeError("truth strip must have one entry per segment")
        rows.append(truth)
    top = max(int(r.max()) for r in rows)
    if top >= len(palette) or min(int(r.min()) for r in rows) < 0:
        raise ParameterError(f"palette has {len(palette)} colours, labels reach {top}")
    return np.concatenate([np.repeat(palette[r][None], height, axis=0) for r in rows], axis=0)


def emit_segment_plot(pred, out_path, palette=None, height: int = SEGMENT_PLOT_HEIGHT, truth=None) -> None:
    """One ``height``-pixel column per segment; a truth strip goes below when given."""
    write_ppm(segment_image(pred, palette, height, truth), out_path)


def confusion_image(confusion, cell: int = CELL_SIZE) -> np.ndarray:
    """Grey heat map, row-normalized; dark means a large share of the row."""
    cm = np.asarray(confusion, dtype=np.float64)
    rows = cm.sum(axis=1, keepdims=True)
    share = np.divide(cm, rows, out=np.zeros_like(cm), where=rows > 0)
    grey = np.rint(255.0 * (1.0 - share)).astype(np.uint8)
    grey = np.kron(grey, np.ones((cell, cell), dtype=np.uint8))
    return np.repeat(grey[:, :, None], 3, axis=2)


def confusion_csv(confusion) -> str:
    cm = np.asarray(confusion, dtype=np.int64)
    return "\n".join(",".join(str(x) for x in row) for row in cm.tolist())


def emit_confusion_matrix(report, csv_path, image_path=None, cell: int = CELL_SIZE) -> None:
    """Raw counts as CSV (no trailing newline) and an optional PPM heat image."""
    cm = report.confusion if isinstance(report, EvaluationReport) else np.asarray(report)
    with open(csv_path, "w", newline="") as fh:
        fh.write(confusion_csv(cm))
    if image_path is not None:
        write_ppm(confusion_image(cm, cell), image_path)
