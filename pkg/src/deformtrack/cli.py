"""Command line: ``deformtrack {synth,track,eval,bench}``.

Exit codes: 0 success, 2 invalid input/configuration, 3 tracking aborted.
"""
from __future__ import annotations

import argparse
import re
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .imaging import load_raw_frame
from .recovery import DescriptorLibrary
from .runner import SequenceTracker
from .synth import PRESETS, SceneScript, preset, read_csv_rows, write_csv_rows, write_dataset
from .track import TrackOptions
from .types import (CameraIntrinsics, Parameters, TrackedModel, TrackingError, load_json,
                    save_json, validate_model)

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3

STAGES = ("preprocess_time", "em_time", "projection_time", "recovery_time", "total_time")
COUNTERS = ("em_calls", "em_iterations", "vis_prior_calls", "lle_calls", "projection_calls",
            "recovery_calls", "retry_tracks", "recovery_replacements", "library_adds",
            "empty_frames", "no_evidence_frames")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- helpers -------------------------------------------------------------------

def _load_params(args) -> Parameters:
    params = Parameters()
    if getattr(args, "params", None):
        try:
            params = Parameters.from_dict(load_json(args.params))
        except (OSError, ValueError, TypeError) as exc:
            raise CliError(f"bad params file {args.params}: {exc}", EXIT_INVALID) from exc
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "tau", None) is not None:
        changes["tau"] = args.tau
    params = params.replace(**changes)
    problems = params.validate()
    if problems:
        raise CliError("invalid parameters: " + "; ".join(problems), EXIT_INVALID)
    return params


def _options(args) -> TrackOptions:
    return TrackOptions(use_vis_prior=not args.no_vis_prior, use_lle=not args.no_lle,
                        use_constraint=not args.no_constraint, use_recovery=not args.no_recovery)


def _frame_indices(dataset: Path) -> list[int]:
    found = sorted(int(m.group(1)) for p in dataset.glob("frame_*.depth.bin")
                   if (m := re.fullmatch(r"frame_(\d+)\.depth\.bin", p.name)))
    if not found:
        return []
    n = found[-1] + 1
    scene = dataset / "scene.json"
    if scene.exists():
        n = max(n, int(load_json(scene).get("n_frames", n)))
    return list(range(n))


def _load_dataset(dataset):
    dataset = Path(dataset)
    if not dataset.is_dir():
        raise CliError(f"dataset {dataset} not found", EXIT_INVALID)
    try:
        intr = CameraIntrinsics.from_dict(load_json(dataset / "camera.json"))
        model = TrackedModel.from_dict(load_json(dataset / "model.json"))
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot read camera/model in {dataset}: {exc}", EXIT_INVALID) from exc
    problems = intr.validate() + validate_model(model)
    if problems:
        raise CliError("invalid dataset: " + "; ".join(problems), EXIT_INVALID)
    frames = _frame_indices(dataset)
    if not frames:
        raise CliError(f"no frames in {dataset}", EXIT_INVALID)
    return dataset, intr, model, frames


def run_tracking(dataset, params: Parameters, options: TrackOptions,
                 library: DescriptorLibrary | None = None) -> SequenceTracker:
    dataset, intr, model, frames = _load_dataset(dataset)
    tracker = SequenceTracker(model, params, options, library or DescriptorLibrary())
    for t in frames:
        try:
            depth, mask, corr = load_raw_frame(dataset, t, intr)
        except (OSError, ValueError) as exc:
            raise CliError(f"frame {t}: {exc}", EXIT_ABORT) from exc
        try:
            tracker.step(depth, mask, intr, corr, t)
        except TrackingError as exc:
            raise CliError(f"tracking failed at frame {t}: {exc}", EXIT_ABORT) from exc
    return tracker


def summarize(tracker: SequenceTracker, options: TrackOptions) -> dict:
    n = len(tracker.results)
    c = tracker.counters
    total = c["total_time"]
    return {
        "n_frames": n,
        "params": tracker.params.to_dict(),
        "options": {k: getattr(options, k) for k in
                    ("use_vis_prior", "use_lle", "use_constraint", "use_recovery")},
        "fps": n / total if total > 0 else float("inf"),
        "stage_time_ms": {k: 1e3 * c[k] / max(n, 1) for k in STAGES},
        "counters": {k: int(c[k]) for k in COUNTERS},
        "frames": [{"index": r.index, "j_free": r.j_free, "recovery_used": r.recovery_used,
                    "n_points": r.n_points,
                    "time_ms": {k: 1e3 * r.times.get(k, 0.0) for k in STAGES}}
                   for r in tracker.results],
    }


# -- subcommands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.preset:
        script = preset(args.preset)
    elif args.scene:
        try:
            script = SceneScript.from_dict(load_json(args.scene))
        except (OSError, TypeError, KeyError, ValueError) as exc:
            raise CliError(f"bad scene file {args.scene}: {exc}", EXIT_INVALID) from exc
    else:
        script = preset("rope_occlusion")
    if args.seed is not None:
        script.seed = args.seed
    if args.frames is not None:
        script.n_frames = args.frames
    if args.half_res:
        c = script.camera
        c.fx, c.fy, c.cx, c.cy = c.fx / 2, c.fy / 2, (c.cx - 0.5) / 2, (c.cy - 0.5) / 2
        c.width, c.height = c.width // 2, c.height // 2
    problems = script.validate()
    if problems:
        raise CliError("invalid scene: " + "; ".join(problems), EXIT_INVALID)
    write_dataset(script, args.out)
    print(f"wrote {script.n_frames} frames to {args.out}")
    return EXIT_OK


def _load_library(args) -> DescriptorLibrary | None:
    if not args.library:
        return None
    try:
        return DescriptorLibrary.load(args.library)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"bad library {args.library}: {exc}", EXIT_INVALID) from exc


def cmd_track(args) -> int:
    params = _load_params(args)
    options = _options(args)
    tracker = run_tracking(args.dataset, params, options, _load_library(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in tracker.results:
        write_csv_rows(out / f"track_{r.index:05d}.csv", r.vertices)
    summary = summarize(tracker, options)
    save_json(summary, out / "run_summary.json")
    if args.save_library:
        tracker.library.save(args.save_library)
    print(f"tracked {summary['n_frames']} frames at {summary['fps']:.1f} FPS, "
          f"recovery on {sum(f['recovery_used'] for f in summary['frames'])} frames")
    return EXIT_OK


def frame_errors(track_dir, gt_dir) -> np.ndarray:
    track_dir, gt_dir = Path(track_dir), Path(gt_dir)
    tracks = sorted(track_dir.glob("track_*.csv"))
    gts = sorted(gt_dir.glob("gt_*.csv"))
    if len(tracks) != len(gts) or not tracks:
        raise CliError(f"{track_dir} has {len(tracks)} frames, {gt_dir} has {len(gts)}",
                       EXIT_INVALID)
    errs = []
    for tp, gp in zip(tracks, gts):
        Y, G = read_csv_rows(tp), read_csv_rows(gp)
        if Y.shape != G.shape:
            raise CliError(f"{tp.name}: shape {Y.shape} vs {G.shape}", EXIT_INVALID)
        errs.append(float(np.mean(np.linalg.norm(Y - G, axis=1))))
    return np.array(errs)


def cmd_eval(args) -> int:
    runs = args.runs or [args.out]
    E = np.stack([frame_errors(r, args.dataset) for r in runs])
    mean = E.mean(axis=0)
    std = E.std(axis=0)
    out = Path(args.errors or Path(runs[0]) / "errors.csv")
    with open(out, "w") as f:
        cols = [f"run{i}" for i in range(len(runs))]
        f.write(",".join(["frame", *cols, "mean", "std"]) + "\n")
        for t in range(E.shape[1]):
            vals = [f"{x:.9g}" for x in E[:, t]] + [f"{mean[t]:.9g}", f"{std[t]:.9g}"]
            f.write(",".join([str(t), *vals]) + "\n")
    print(f"mean error {1e3 * mean.mean():.2f} mm over {E.shape[1]} frames, "
          f"{len(runs)} run(s); wrote {out}")
    return EXIT_OK


def bench_table(rows: dict) -> str:
    """Markdown table in the layout of a per-component timing breakdown."""
    head = "| Run | Pre-Proc (ms) | CPD (ms) | Projection (ms) | Recovery (ms) | Total (ms) | FPS |"
    lines = [head, "|---|---|---|---|---|---|---|"]
    for name, r in rows.items():
        lines.append(f"| {name} | {r['preprocess_time']:.1f} | {r['em_time']:.1f} | "
                     f"{r['projection_time']:.1f} | {r['recovery_time']:.1f} | "
                     f"{r['total_time']:.1f} | {r['fps']:.1f} |")
    return "\n".join(lines)


def cmd_bench(args) -> int:
    params = _load_params(args)
    options = _options(args)
    library = _load_library(args)
    per_run = []
    outputs = None
    for _ in range(args.repeats):
        tracker = run_tracking(args.dataset, params, options, library)
        n = len(tracker.results)
        per_run.append({k: 1e3 * tracker.counters[k] / n for k in STAGES})
        states = np.stack([r.vertices for r in tracker.results])
        if outputs is not None and not np.array_equal(outputs, states):
            raise CliError("tracking output changed between repeats", EXIT_ABORT)
        outputs = states
    med = {k: statistics.median(r[k] for r in per_run) for k in STAGES}
    med["fps"] = 1e3 / med["total_time"]
    table = bench_table({f"tau={params.tau:g}": med})
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_json({"median_ms": med, "runs_ms": per_run, "repeats": args.repeats,
                   "tau": params.tau}, out / "bench.json")
        (out / "bench.md").write_text(table + "\n")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

def _add_run_flags(p):
    p.add_argument("--dataset", required=True, help="frame directory")
    p.add_argument("--params", help="params.json (defaults when omitted)")
    p.add_argument("--seed", type=int, help="downsampling seed")
    p.add_argument("--tau", type=float, help="free-space failure threshold")
    p.add_argument("--no-vis-prior", action="store_true")
    p.add_argument("--no-lle", action="store_true")
    p.add_argument("--no-constraint", action="store_true")
    p.add_argument("--no-recovery", action="store_true")
    p.add_argument("--library", help="descriptor library to start from")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="deformtrack", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("scene", nargs="?", help="scene.json (default: the rope occlusion scene)")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="noise seed")
    p.add_argument("--frames", type=int, help="override the frame count")
    p.add_argument("--half-res", action="store_true", help="render at 480x270")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", help="track a dataset")
    _add_run_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--save-library", help="write the final descriptor library here")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("eval", help="per-frame mean vertex error against ground truth")
    p.add_argument("--dataset", required=True, help="directory with gt_%%05d.csv")
    p.add_argument("--out", help="track directory (single run)")
    p.add_argument("--runs", nargs="+", help="several track directories to average")
    p.add_argument("--errors", help="output CSV (default: <first run>/errors.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="median per-stage timings")
    _add_run_flags(p)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="directory for bench.json / bench.md")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "eval" and not (args.out or args.runs):
        print("error: eval needs --out or --runs", file=sys.stderr)
        return EXIT_INVALID
    if getattr(args, "repeats", 1) < 1:
        print("error: --repeats must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
