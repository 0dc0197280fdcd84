"""End-to-end runs driven by a JSON config.

Stages run in the order of ``STAGES``. Each persists its outputs under
``out_dir`` and is skipped on a later run when those outputs exist, unless
``force`` is set or an earlier stage had to run again.

Minimal config::

    {
      "out_dir": "run1",
      "class_names": ["walk", "sit"],
      "videos": [
        {"id": "a", "frames_dir": "frames/a", "fps": 30, "label": 0},
        {"id": "b", "flo_dir": "flow/b", "fps": 30, "label": 1},
        {"id": "c", "synthetic": {"pattern": "rotate:0.05", "frames": 600,
                                  "noise": 0.3, "seed": 1}, "label": 1}
      ]
    }

Every other block (``resolution``, ``flow``, ``descriptor``, ``nmf``,
``smoothing``, ``spectrum``, ``mbo``, ``fidelity``, ``batch_size``,
``evaluation``, ``plot``) is optional and falls back to the defaults below.
Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from filelock import FileLock, Timeout

from . import evaluation as ev
from .errors import EgographError, ParameterError, StageError
from .flow_field import (CANONICAL_HEIGHT, CANONICAL_WIDTH, FlowParams, compute_flow, flo_paths,
                         frame_paths, read_flo, read_frame, resize_frame, synthetic_sequence,
                         write_flo)
from .graph_spectrum import ScaleParams, SpectrumParams, compute_spectrum, read_spc, write_spc
from .mbo_classifier import (LabelData, MboParams, batch_bounds, mbo_classify, read_labels_csv,
                             sample_fidelity, write_diagnostics_csv, write_labels_csv)
from .motion_descriptor import DescriptorConfig, build_descriptor_matrix, read_gmd, write_gmd
from .reduction import nmf, project_nnls, smooth

log = logging.getLogger(__name__)

STAGES = ("flow", "descriptor", "reduce", "spectrum", "classify", "evaluate", "plot")
LOCK_NAME = ".egograph.lock"


@dataclass
class Video:
    id: str
    fps: float = 30.0
    frames_dir: str | None = None
    flo_dir: str | None = None
    synthetic: dict | None = None
    label: int | None = None
    split: str = "train"
    frames: int | None = None

    def __post_init__(self):
        sources = [s for s in (self.frames_dir, self.flo_dir, self.synthetic) if s is not None]
        if len(sources) != 1:
            raise ParameterError(f"video {self.id!r} needs exactly one of frames_dir, flo_dir, synthetic")
        if self.fps <= 0:
            raise ParameterError(f"video {self.id!r}: fps must be positive")
        if self.split not in ("train", "test"):
            raise ParameterError(f"video {self.id!r}: split must be 'train' or 'test'")


@dataclass
class PipelineConfig:
    out_dir: str
    class_names: list[str]
    videos: list[Video]
    truth_labels: str | None = None
    eval_classes: list[int] | None = None
    resolution: tuple[int, int] = (CANONICAL_WIDTH, CANONICAL_HEIGHT)
    flow: FlowParams = field(default_factory=FlowParams)
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    nmf_rank: int = 50
    nmf_iters: int = 500
    nmf_tol: float = 1e-6
    nmf_seed: int = 0
    basis_in: str | None = None
    window: int = 5
    spectrum: SpectrumParams = field(default_factory=SpectrumParams)
    mbo: MboParams = field(default_factory=MboParams)
    fidelity_fraction: float = 0.1
    fidelity_seed: int = 0
    fidelity_file: str | None = None
    batch_size: int | None = None
    eval_mode: str = "all"
    plot_height: int = ev.SEGMENT_PLOT_HEIGHT
    palette: str | None = None

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def _resolve(base: str, path):
    if path is None or os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base, path))


def parse_config(doc: dict, base_dir: str = ".", out_dir: str | None = None) -> PipelineConfig:
    """Build a :class:`PipelineConfig` from a decoded JSON document."""
    try:
        videos = []
        for i, v in enumerate(doc["videos"]):
            v = dict(v)
            v.setdefault("id", f"video{i:03d}")
            for key in ("frames_dir", "flo_dir"):
                v[key] = _resolve(base_dir, v.get(key))
            videos.append(Video(**v))
        if not videos:
            raise ParameterError("config lists no videos")
        ids = [v.id for v in videos]
        if len(set(ids)) != len(ids):
            raise ParameterError("video ids must be unique")
        names = list(doc["class_names"])
    except KeyError as exc:
        raise ParameterError(f"config is missing required key {exc}") from None
    except TypeError as exc:
        raise ParameterError(f"malformed video entry: {exc}") from None

    res = doc.get("resolution", [CANONICAL_WIDTH, CANONICAL_HEIGHT])
    fl = doc.get("flow", {})
    de = doc.get("descriptor", {})
    nm = doc.get("nmf", {})
    sp = doc.get("spectrum", {})
    mb = doc.get("mbo", {})
    fi = doc.get("fidelity", {})
    evd = doc.get("evaluation", {})
    pl = doc.get("plot", {})
    tau = sp.get("tau")
    scales = ScaleParams.fixed(float(tau)) if tau is not None else ScaleParams.local(int(sp.get("knn", 10)))
    cfg = PipelineConfig(
        out_dir=out_dir or _resolve(base_dir, doc.get("out_dir", "egograph_out")),
        class_names=names,
        videos=videos,
        truth_labels=_resolve(base_dir, doc.get("truth_labels")),
        eval_classes=doc.get("eval_classes"),
        resolution=(int(res[0]), int(res[1])),
        flow=FlowParams(smoothness=float(fl.get("alpha", 10.0)),
                        iterations=int(fl.get("iters", 100)),
                        convergence_tol=float(fl.get("tol", 1e-4))),
        descriptor=DescriptorConfig(dx=int(de.get("dx", 64)), dy=int(de.get("dy", 64)),
                                    dt=int(de.get("dt", 60)), fps=float(de.get("fps", 30.0))),
        nmf_rank=int(nm.get("rank", 50)),
        nmf_iters=int(nm.get("iters", 500)),
        nmf_tol=float(nm.get("tol", 1e-6)),
        nmf_seed=int(nm.get("seed", 0)),
        basis_in=_resolve(base_dir, nm.get("basis_in")),
        window=int(doc.get("smoothing", {}).get("window", 5)),
        spectrum=SpectrumParams(n_sample=int(sp.get("n_sample", 400)), n_eig=int(sp.get("n_eig", 400)),
                                scales=scales, seed=int(sp.get("seed", 0)),
                                paper_literal_da=bool(sp.get("paper_literal_da", False))),
        mbo=MboParams(eta=float(mb.get("eta", 300.0)), dt=float(mb.get("dt", 0.1)),
                      n_step=int(mb.get("n_step", 10)), max_iter=int(mb.get("max_iter", 300)),
                      seed=int(mb.get("seed", 0))),
        fidelity_fraction=float(fi.get("fraction", 0.1)),
        fidelity_seed=int(fi.get("seed", 0)),
        fidelity_file=_resolve(base_dir, fi.get("file")),
        batch_size=doc.get("batch_size"),
        eval_mode=evd.get("mode", "all"),
        plot_height=int(pl.get("height", ev.SEGMENT_PLOT_HEIGHT)),
        palette=_resolve(base_dir, pl.get("palette")),
    )
    if cfg.eval_mode not in ("all", "heldout"):
        raise ParameterError("evaluation mode must be 'all' or 'heldout'")
    for v in videos:
        if v.label is not None and not 0 <= v.label < cfg.n_classes:
            raise ParameterError(f"video {v.id!r}: label {v.label} outside the {cfg.n_classes} classes")
    return cfg


def load_config(path, out_dir: str | None = None) -> PipelineConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise StageError("config", exc.strerror or str(exc), path) from None
    except json.JSONDecodeError as exc:
        raise StageError("config", f"invalid JSON: {exc}", path) from None
    try:
        return parse_config(doc, os.path.dirname(os.path.abspath(path)), out_dir)
    except EgographError as exc:
        raise StageError("config", str(exc), path) from None


# --------------------------------------------------------------------------
# output layout


class Layout:
    def __init__(self, out_dir: str):
        self.root = out_dir

    def path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    def flow_dir(self, video_id: str) -> str:
        return self.path("flow", video_id)

    descriptor = property(lambda self: self.path("descriptor.gmd"))
    segments = property(lambda self: self.path("segments.json"))
    basis = property(lambda self: self.path("basis.gmd"))
    coefficients = property(lambda self: self.path("coefficients.gmd"))
    features = property(lambda self: self.path("features.gmd"))
    nmf_log = property(lambda self: self.path("nmf.json"))
    predictions = property(lambda self: self.path("predictions.csv"))
    fidelity = property(lambda self: self.path("fidelity.csv"))
    report = property(lambda self: self.path("report.json"))
    confusion_csv = property(lambda self: self.path("confusion.csv"))
    confusion_ppm = property(lambda self: self.path("confusion.ppm"))
    plot = property(lambda self: self.path("segments.ppm"))

    def spectrum(self, batch: int) -> str:
        return self.path(f"spectrum_{batch:03d}.spc")

    def diagnostics(self, batch: int) -> str:
        return self.path(f"diagnostics_{batch:03d}.csv")


# --------------------------------------------------------------------------
# stages


def _compute_video_flow(video: Video, cfg: PipelineConfig, dest: str) -> None:
    if not os.path.isdir(video.frames_dir):
        raise StageError("flow", f"frames directory for video {video.id!r} not found", video.frames_dir)
    paths = frame_paths(video.frames_dir)
    if video.frames is not None:
        paths = paths[:video.frames]
    if len(paths) < 2:
        raise StageError("flow", f"video {video.id!r} needs at least two frames", video.frames_dir)
    tmp = dest + ".tmp"
    shutil.rmtree(tmp, ignore_errors=True)
    os.makedirs(tmp)
    w, h = cfg.resolution
    prev = None
    for i, p in enumerate(paths):
        try:
            frame = resize_frame(read_frame(p), w, h)
        except (OSError, EgographError) as exc:
            shutil.rmtree(tmp, ignore_errors=True)
            raise StageError("flow", str(exc), p) from None
        if prev is not None:
            write_flo(compute_flow(prev, frame, cfg.flow), os.path.join(tmp, f"{i - 1:06d}.flo"))
        prev = frame
    shutil.rmtree(dest, ignore_errors=True)
    os.replace(tmp, dest)


def stage_flow(cfg: PipelineConfig, lay: Layout, force: bool) -> bool:
    """Horn-Schunck flow for frame-directory videos. Other sources need no work here."""
    ran = False
    for v in cfg.videos:
        if v.frames_dir is None:
            continue
        dest = lay.flow_dir(v.id)
        if os.path.isdir(dest) and not force:
            continue
        os.makedirs(lay.path("flow"), exist_ok=True)
        log.info("flow: %s", v.id)
        _compute_video_flow(v, cfg, dest)
        ran = True
    return ran


def _video_fields(v: Video, cfg: PipelineConfig, lay: Layout) -> Iterator:
    if v.synthetic is not None:
        s = v.synthetic
        n = int(s.get("frames", v.frames or 0))
        w, h = cfg.resolution
        return synthetic_sequence(s["pattern"], n, w, h, float(s.get("noise", 0.0)), int(s.get("seed", 0)))
    directory = v.flo_dir if v.flo_dir is not None else lay.flow_dir(v.id)
    if not os.path.isdir(directory):
        raise StageError("descriptor", f"flow directory for video {v.id!r} not found", directory)
    paths = flo_paths(directory)
    if v.frames is not None and v.flo_dir is not None:
        paths = paths[:v.frames]
    return (read_flo(p) for p in paths)


def stage_descriptor(cfg: PipelineConfig, lay: Layout) -> None:
    blocks, segments, start = [], [], 0
    for v in cfg.videos:
        dcfg = DescriptorConfig(cfg.descriptor.dx, cfg.descriptor.dy, cfg.descriptor.dt, v.fps,
                                cfg.descriptor.zero_threshold)
        try:
            X = build_descriptor_matrix(_video_fields(v, cfg, lay), dcfg)
        except StageError:
            raise
        except (OSError, EgographError) as exc:
            raise StageError("descriptor", f"video {v.id!r}: {exc}",
                             v.flo_dir or v.frames_dir) from None
        blocks.append(X)
        segments.append({"id": v.id, "start": start, "count": X.shape[1],
                         "label": v.label, "split": v.split})
        start += X.shape[1]
    write_gmd(np.hstack(blocks), lay.descriptor)
    with open(lay.segments, "w") as fh:
        json.dump(segments, fh, indent=1)


def _segments(lay: Layout) -> list[dict]:
    with open(lay.segments) as fh:
        return json.load(fh)


def stage_reduce(cfg: PipelineConfig, lay: Layout) -> None:
    X = read_gmd(lay.descriptor)
    if cfg.basis_in is not None:
        V = read_gmd(cfg.basis_in)
        H = project_nnls(X, V)
        history = []
    else:
        factors = nmf(X, cfg.nmf_rank, cfg.nmf_iters, cfg.nmf_tol, cfg.nmf_seed)
        V, H, history = factors.V, factors.H, factors.objective_history
    # smooth within each video so no window straddles two recordings
    feats = np.empty_like(H)
    for seg in _segments(lay):
        sl = slice(seg["start"], seg["start"] + seg["count"])
        feats[:, sl] = smooth(H[:, sl], cfg.window)
    write_gmd(V, lay.basis)
    write_gmd(H, lay.coefficients)
    write_gmd(feats, lay.features)
    with open(lay.nmf_log, "w") as fh:
        json.dump({"objective": history, "basis_in": cfg.basis_in}, fh)


def _bounds(cfg: PipelineConfig, n: int) -> list[tuple[int, int]]:
    return batch_bounds(n, cfg.batch_size) if cfg.batch_size else [(0, n)]


def stage_spectrum(cfg: PipelineConfig, lay: Layout) -> None:
    points = read_gmd(lay.features).T
    for b, (start, stop) in enumerate(_bounds(cfg, len(points))):
        sp = SpectrumParams(cfg.spectrum.n_sample, cfg.spectrum.n_eig, cfg.spectrum.scales,
                            cfg.spectrum.seed + b, cfg.spectrum.paper_literal_da)
        write_spc(compute_spectrum(points[start:stop], sp), lay.spectrum(b))


def truth_labels(cfg: PipelineConfig, lay: Layout) -> np.ndarray | None:
    """Per-segment ground truth from ``truth_labels`` CSV, else from per-video labels."""
    segs = _segments(lay)
    n = sum(s["count"] for s in segs)
    if cfg.truth_labels is not None:
        idx, cls = read_labels_csv(cfg.truth_labels)
        truth = np.full(n, -1, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise StageError("classify", f"truth labels reference segments outside [0, {n})", cfg.truth_labels)
        truth[idx] = cls
        if np.any(truth < 0):
            raise StageError("classify", "truth labels do not cover every segment", cfg.truth_labels)
        return truth
    if all(s["label"] is not None for s in segs):
        return np.concatenate([np.full(s["count"], s["label"], dtype=np.int64) for s in segs])
    return None


def _split_indices(lay: Layout, split: str) -> np.ndarray:
    parts = [np.arange(s["start"], s["start"] + s["count"]) for s in _segments(lay) if s["split"] == split]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def _fidelity(cfg: PipelineConfig, lay: Layout, n: int, truth) -> LabelData:
    if cfg.fidelity_file is not None:
        idx, cls = read_labels_csv(cfg.fidelity_file)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise StageError("classify", f"fidelity file references segments outside [0, {n})", cfg.fidelity_file)
        return LabelData.from_indices(n, cfg.n_classes, idx, cls)
    if truth is None:
        raise StageError("classify", "no fidelity file and no ground truth to sample fidelity from")
    candidates = _split_indices(lay, "train") if cfg.eval_mode == "heldout" else None
    return sample_fidelity(truth, cfg.fidelity_fraction, cfg.fidelity_seed, cfg.n_classes, candidates)


def stage_classify(cfg: PipelineConfig, lay: Layout) -> None:
    n = read_gmd(lay.features).shape[1]
    labels = _fidelity(cfg, lay, n, truth_labels(cfg, lay))
    write_labels_csv(lay.fidelity, labels.fidelity[labels.mask], labels.indices)
    u = np.zeros((n, cfg.n_classes))
    for b, (start, stop) in enumerate(_bounds(cfg, n)):
        sub = labels.subset(start, stop)
        if not sub.mask.any():
            raise StageError("classify", f"batch {b} [{start}, {stop}) has no fidelity nodes")
        spectrum = read_spc(lay.spectrum(b))
        if spectrum.n != stop - start:
            raise StageError("classify", "spectrum does not match the batch size; rerun with --force",
                             lay.spectrum(b))
        mp = MboParams(cfg.mbo.eta, cfg.mbo.dt, cfg.mbo.n_step, cfg.mbo.max_iter, cfg.mbo.seed + b)
        result = mbo_classify(spectrum, sub, mp)
        u[start:stop] = result.u
        write_diagnostics_csv(lay.diagnostics(b), result.changed)
    write_labels_csv(lay.predictions, np.argmax(u, axis=1))


def _predictions(lay: Layout) -> np.ndarray:
    idx, cls = read_labels_csv(lay.predictions)
    return cls[np.argsort(idx, kind="stable")]


def stage_evaluate(cfg: PipelineConfig, lay: Layout) -> None:
    truth = truth_labels(cfg, lay)
    if truth is None:
        log.info("evaluate: no ground truth, skipped")
        return
    pred = _predictions(lay)
    keep = _split_indices(lay, "test") if cfg.eval_mode == "heldout" else np.arange(len(pred))
    report = ev.evaluate(pred[keep], truth[keep], cfg.n_classes, cfg.eval_classes)
    with open(lay.report, "w") as fh:
        json.dump(report.to_dict(cfg.class_names), fh, indent=1)
    ev.emit_confusion_matrix(report, lay.confusion_csv, lay.confusion_ppm)


def stage_plot(cfg: PipelineConfig, lay: Layout) -> None:
    pred = _predictions(lay)
    ev.emit_segment_plot(pred, lay.plot, ev.load_palette(cfg.palette), cfg.plot_height,
                         truth_labels(cfg, lay))


def _outputs(stage: str, cfg: PipelineConfig, lay: Layout) -> list[str]:
    if stage == "descriptor":
        return [lay.descriptor, lay.segments]
    if stage == "reduce":
        return [lay.basis, lay.coefficients, lay.features]
    if stage == "spectrum":
        if not os.path.exists(lay.segments):
            return [lay.spectrum(0)]
        n = sum(s["count"] for s in _segments(lay))
        return [lay.spectrum(b) for b in range(len(_bounds(cfg, n)))]
    if stage == "classify":
        return [lay.predictions, lay.fidelity]
    if stage == "evaluate":
        return [lay.report]
    if stage == "plot":
        return [lay.plot]
    raise ValueError(stage)


_RUNNERS: dict[str, Callable[[PipelineConfig, Layout], None]] = {
    "descriptor": stage_descriptor,
    "reduce": stage_reduce,
    "spectrum": stage_spectrum,
    "classify": stage_classify,
    "evaluate": stage_evaluate,
    "plot": stage_plot,
}


@dataclass
class RunSummary:
    out_dir: str
    ran: list[str]
    skipped: list[str]


def run_pipeline(config, force: bool = False, out_dir: str | None = None) -> RunSummary:
    """Run every stage for ``config`` (a path or a :class:`PipelineConfig`).

    Raises :class:`StageError` naming the failing stage.
    """
    cfg = config if isinstance(config, PipelineConfig) else load_config(config, out_dir)
    lay = Layout(cfg.out_dir)
    os.makedirs(lay.root, exist_ok=True)
    lock = FileLock(lay.path(LOCK_NAME))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise StageError("run", "another egograph run holds the lock", lay.path(LOCK_NAME)) from None
    ran, skipped = [], []
    try:
        dirty = force
        for stage in STAGES:
            try:
                if stage == "flow":
                    did = stage_flow(cfg, lay, force)
                    (ran if did else skipped).append(stage)
                    dirty = dirty or did
                    continue
                if stage == "evaluate" and truth_labels(cfg, lay) is None:
                    skipped.append(stage)
                    continue
                if not dirty and all(os.path.exists(p) for p in _outputs(stage, cfg, lay)):
                    skipped.append(stage)
                    continue
                log.info("stage %s", stage)
                _RUNNERS[stage](cfg, lay)
                ran.append(stage)
                dirty = True
            except StageError:
                raise
            except (OSError, EgographError, ArithmeticError) as exc:
                path = getattr(exc, "filename", None)
                raise StageError(stage, str(exc), path) from exc
    finally:
        lock.release()
    return RunSummary(out_dir=lay.root, ran=ran, skipped=skipped)
