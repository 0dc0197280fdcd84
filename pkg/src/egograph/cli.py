"""Command-line entry point: ``egograph <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import evaluation as ev
from .errors import EgographError, StageError
from .flow_field import (CANONICAL_HEIGHT, CANONICAL_WIDTH, FlowParams, compute_flow, flo_paths,
                         frame_paths, read_flo, read_frame, resize_frame, synthetic_sequence,
                         write_flo)
from .graph_spectrum import (ScaleParams, SpectrumParams, compute_spectrum, read_spc, write_spc)
from .mbo_classifier import (LabelData, MboParams, classify_batched, mbo_classify,
                             read_labels_csv, sample_fidelity, write_diagnostics_csv,
                             write_labels_csv)
from .motion_descriptor import (DescriptorConfig, build_descriptor_matrix, read_gmd, write_gmd,
                                write_matrix_csv)
from .pipeline import run_pipeline
from .reduction import nmf, project_nnls, smooth


def _cmd_flow(args) -> None:
    os.makedirs(args.out_dir, exist_ok=True)
    if args.synthetic:
        fields = synthetic_sequence(args.synthetic, args.count, args.width, args.height,
                                    args.noise, args.seed)
        for i, f in enumerate(fields):
            write_flo(f, os.path.join(args.out_dir, f"{i:06d}.flo"))
        return
    if not args.frames_dir:
        raise StageError("flow", "give --frames-dir or --synthetic")
    if not os.path.isdir(args.frames_dir):
        raise StageError("flow", "frames directory not found", args.frames_dir)
    params = FlowParams(smoothness=args.alpha, iterations=args.iters)
    paths = frame_paths(args.frames_dir)
    if len(paths) < 2:
        raise StageError("flow", "need at least two .pgm frames", args.frames_dir)
    prev = resize_frame(read_frame(paths[0]), args.width, args.height)
    for i, p in enumerate(paths[1:]):
        cur = resize_frame(read_frame(p), args.width, args.height)
        write_flo(compute_flow(prev, cur, params), os.path.join(args.out_dir, f"{i:06d}.flo"))
        prev = cur


def _cmd_descriptor(args) -> None:
    if not os.path.isdir(args.flo_dir):
        raise StageError("descriptor", "flow directory not found", args.flo_dir)
    cfg = DescriptorConfig(dx=args.dx, dy=args.dy, dt=args.dt, fps=args.fps)
    X = build_descriptor_matrix((read_flo(p) for p in flo_paths(args.flo_dir)), cfg)
    write_gmd(X, args.out)
    if args.csv:
        write_matrix_csv(X, args.csv)
    print(f"{X.shape[0]} bins x {X.shape[1]} segments ({cfg.segment_seconds:g} s each)")


def _cmd_reduce(args) -> None:
    X = read_gmd(args.input)
    if args.basis_in:
        V = read_gmd(args.basis_in)
        H = project_nnls(X, V)
    else:
        f = nmf(X, args.rank, args.iters, args.tol, args.seed)
        V, H = f.V, f.H
        print(f"NMF: {f.iterations} iterations, objective {f.final_objective:.6g}, "
              f"converged={f.converged}")
    if args.basis_out:
        write_gmd(V, args.basis_out)
    write_gmd(smooth(H, args.window), args.out)


def _scales(args) -> ScaleParams:
    return ScaleParams.fixed(args.tau) if args.tau is not None else ScaleParams.local(args.knn)


def _spectrum_params(args, seed) -> SpectrumParams:
    return SpectrumParams(args.nsample, args.neig, _scales(args), seed, args.paper_literal_da)


def _cmd_spectrum(args) -> None:
    points = read_gmd(args.features).T
    spectrum = compute_spectrum(points, _spectrum_params(args, args.seed))
    write_spc(spectrum, args.out)
    print(f"{spectrum.n_eig} eigenpairs for {spectrum.n} nodes, "
          f"lambda in [{spectrum.values[0]:.4g}, {spectrum.values[-1]:.4g}]")


def _labels(args, n: int) -> LabelData:
    if args.fidelity_file:
        idx, cls = read_labels_csv(args.fidelity_file)
        c = args.classes or int(cls.max()) + 1
        return LabelData.from_indices(n, c, idx, cls)
    if not args.truth:
        raise StageError("classify", "give --fidelity-file or --truth to sample fidelity from")
    idx, cls = read_labels_csv(args.truth)
    truth = np.empty(n, dtype=np.int64)
    if len(idx) != n:
        raise StageError("classify", f"truth covers {len(idx)} segments, expected {n}", args.truth)
    truth[idx] = cls
    return sample_fidelity(truth, args.fidelity_fraction, args.fidelity_seed, args.classes)


def _cmd_classify(args) -> None:
    mp = MboParams(args.eta, args.dt, args.nstep, args.max_iter, args.seed)
    if args.batch_size:
        if not args.features:
            raise StageError("classify", "--batch-size needs --features to build per-batch spectra")
        points = read_gmd(args.features).T
        labels = _labels(args, len(points))
        out = classify_batched(points, labels, args.batch_size,
                               _spectrum_params(args, args.spectrum_seed), mp)
        pred, changed = out.labels, [c for b in out.batches for c in b.result.changed]
        converged = out.converged
    else:
        if not args.spectrum:
            raise StageError("classify", "give --spectrum (or --features with --batch-size)")
        spectrum = read_spc(args.spectrum)
        labels = _labels(args, spectrum.n)
        res = mbo_classify(spectrum, labels, mp)
        pred, changed, converged = res.labels, res.changed, res.converged
    write_labels_csv(args.out, pred)
    if args.diagnostics:
        write_diagnostics_csv(args.diagnostics, changed)
    print(f"classified {len(pred)} segments, converged={converged}")


def _read_classes(path) -> np.ndarray:
    idx, cls = read_labels_csv(path)
    return cls[np.argsort(idx, kind="stable")]


def _cmd_evaluate(args) -> None:
    pred, truth = _read_classes(args.pred), _read_classes(args.truth)
    eval_classes = [int(x) for x in args.eval_classes.split(",")] if args.eval_classes else None
    report = ev.evaluate(pred, truth, args.classes, eval_classes)
    text = json.dumps(report.to_dict(), indent=1)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    if args.confusion_csv:
        ev.emit_confusion_matrix(report, args.confusion_csv, args.confusion_image)
    print(f"accuracy {report.accuracy:.4f}  mean precision {report.mean_precision:.4f}  "
          f"mean recall {report.mean_recall:.4f}")


def _cmd_plot(args) -> None:
    pred = _read_classes(args.pred)
    truth = _read_classes(args.truth) if args.truth else None
    ev.emit_segment_plot(pred, args.out, ev.load_palette(args.palette), args.height, truth)


def _cmd_run(args) -> None:
    summary = run_pipeline(args.config, force=args.force, out_dir=args.out_dir)
    print(f"ran: {', '.join(summary.ran) or '-'}; skipped: {', '.join(summary.skipped) or '-'}")
    print(f"outputs in {summary.out_dir}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egograph", description="Activity labeling of first-person "
                                "video from optical-flow histograms and graph MBO.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("flow", help="dense Horn-Schunck flow or synthetic .flo sequences")
    s.add_argument("--frames-dir")
    s.add_argument("--synthetic", metavar="PATTERN", help="e.g. translate:2,0 | rotate:0.05 | zoom:0.03")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--alpha", type=float, default=10.0)
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--width", type=int, default=CANONICAL_WIDTH)
    s.add_argument("--height", type=int, default=CANONICAL_HEIGHT)
    s.add_argument("--count", type=int, default=60, help="synthetic fields to write")
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_flow, stage="flow")

    s = sub.add_parser("descriptor", help="octant histogram matrix from .flo files")
    s.add_argument("--flo-dir", required=True)
    s.add_argument("--dt", type=int, default=60)
    s.add_argument("--dx", type=int, default=64)
    s.add_argument("--dy", type=int, default=64)
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--out", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=_cmd_descriptor, stage="descriptor")

    s = sub.add_parser("reduce", help="NMF (or fixed-basis NNLS) and smoothing")
    s.add_argument("--input", required=True, help="descriptor matrix (GMD1)")
    s.add_argument("--out", required=True, help="smoothed coefficients (GMD1)")
    s.add_argument("--rank", type=int, default=50)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--basis-out")
    s.add_argument("--basis-in")
    s.set_defaults(func=_cmd_reduce, stage="reduce")

    def spectrum_flags(s, seed_flag):
        s.add_argument("--nsample", type=int, default=400)
        s.add_argument("--neig", type=int, default=400)
        s.add_argument("--knn", type=int, default=10)
        s.add_argument("--tau", type=float, help="global scale; local scaling when omitted")
        s.add_argument(seed_flag, type=int, default=0)
        s.add_argument("--paper-literal-da", action="store_true",
                       help="landmark strengths from landmark-landmark weights only")

    s = sub.add_parser("spectrum", help="Nystrom eigenpairs of the graph Laplacian")
    s.add_argument("--features", required=True, help="feature matrix (GMD1, rank x segments)")
    s.add_argument("--out", required=True)
    spectrum_flags(s, "--seed")
    s.set_defaults(func=_cmd_spectrum, stage="spectrum")

    s = sub.add_parser("classify", help="graph MBO labeling")
    s.add_argument("--spectrum")
    s.add_argument("--features", help="needed with --batch-size")
    s.add_argument("--truth", help="labels CSV to sample fidelity from")
    s.add_argument("--classes", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--diagnostics")
    s.add_argument("--eta", type=float, default=300.0)
    s.add_argument("--dt", type=float, default=0.1)
    s.add_argument("--nstep", type=int, default=10)
    s.add_argument("--max-iter", type=int, default=300)
    s.add_argument("--fidelity-fraction", type=float, default=0.1)
    s.add_argument("--fidelity-file")
    s.add_argument("--fidelity-seed", type=int, default=0)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--seed", type=int, default=0)
    spectrum_flags(s, "--spectrum-seed")
    s.set_defaults(func=_cmd_classify, stage="classify")

    s = sub.add_parser("evaluate", help="precision, recall, accuracy and confusion matrix")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--classes", type=int)
    s.add_argument("--eval-classes", help="comma-separated class ids for the means")
    s.add_argument("--report")
    s.add_argument("--confusion-csv")
    s.add_argument("--confusion-image")
    s.set_defaults(func=_cmd_evaluate, stage="evaluate")

    s = sub.add_parser("plot", help="segment strip image (PPM)")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth")
    s.add_argument("--out", required=True)
    s.add_argument("--height", type=int, default=ev.SEGMENT_PLOT_HEIGHT)
    s.add_argument("--palette")
    s.set_defaults(func=_cmd_plot, stage="plot")

    s = sub.add_parser("run", help="full pipeline from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--force", action="store_true")
    s.add_argument("--out-dir")
    s.set_defaults(func=_cmd_run, stage="run")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as exc:
        print(f"egograph: {exc}", file=sys.stderr)
        return 1
    except (OSError, EgographError, ArithmeticError) as exc:
        path = getattr(exc, "filename", None)
        print(f"egograph: {StageError(args.stage, exc.strerror if isinstance(exc, OSError) and exc.strerror else exc, path)}",
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
