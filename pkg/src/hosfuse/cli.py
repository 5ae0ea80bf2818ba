"""Command line: fuse, evaluate, synth, bench, render.

Exit codes: 0 success, 1 I/O or syntax error, 2 semantic validation error.
Diagnostics go to stderr; data goes to files (and tables to stdout).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence

from hosfuse.datamodel import (
    BundleError,
    BundleSyntaxError,
    FusedFrame,
    parse_frame_bundle,
    parse_fused,
    parse_ground_truth,
    read_manifest,
    serialize_frame_bundle,
    serialize_fused,
    serialize_ground_truth,
    write_manifest,
)
from hosfuse.evaluation import EvaluationError, evaluate, render_csv, render_report
from hosfuse.fusion import ConfigError, FusionConfig, fuse_frame, source_counts
from hosfuse.synthbench import SynthError, SynthParams, generate_frame, run_benchmark

log = logging.getLogger("hosfuse")

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers


def _parallel_map(fn: Callable, items: Sequence, jobs: int) -> list:
    """Order-preserving map; output never depends on ``jobs``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _manifest_paths(path: Path) -> list[Path]:
    """Document paths from a manifest file, or from ``manifest.txt`` in a directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    try:
        paths = read_manifest(path)
    except OSError as exc:
        raise CliError(f"cannot read manifest {path}: {exc.strerror or exc}", EXIT_IO) from None
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise CliError(f"manifest {path} references missing files: {', '.join(missing)}", EXIT_IO)
    return paths


def _read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None


def _safe_id(image_id: str) -> str:
    if not image_id or image_id.startswith(".") or any(c in image_id for c in "/\\\0"):
        raise CliError(f"[{image_id}] image_id is not usable as a file name", EXIT_INVALID)
    return image_id


def _check_unique(ids: Iterable[str], what: str) -> None:
    seen, dupes = set(), []
    for i in ids:
        if i in seen:
            dupes.append(i)
        seen.add(i)
    if dupes:
        raise CliError(f"duplicate image_id in {what}: {', '.join(sorted(set(dupes)))}", EXIT_INVALID)


def _load_config(path: str | None) -> FusionConfig:
    if path is None:
        return FusionConfig()
    text = _read_text(Path(path))
    try:
        return FusionConfig.from_json(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path}: invalid JSON: {exc}", EXIT_IO) from None
    except (ConfigError, TypeError) as exc:
        raise CliError(f"config {path}: {exc}", EXIT_INVALID) from None


def _error_code(exc: BundleError) -> int:
    return EXIT_IO if isinstance(exc, BundleSyntaxError) else EXIT_INVALID


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _load_docs(paths: Sequence[Path], parser, jobs: int) -> list:
    results = _parallel_map(_ParseJob(parser), [str(p) for p in paths], jobs)
    errors = [r for r in results if isinstance(r, tuple)]
    if errors:
        for path, msg, code in errors:
            print(f"{path}: {msg}", file=sys.stderr)
        raise CliError(f"{len(errors)} document(s) failed to load", max(e[2] for e in errors))
    return results


class _ParseJob:
    def __init__(self, parser):
        self.parser = parser

    def __call__(self, path: str):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            return (path, str(exc), EXIT_IO)
        try:
            return self.parser(text)
        except BundleError as exc:
            return (path, str(exc), _error_code(exc))


# ---------------------------------------------------------------- fuse


class _FuseJob:
    def __init__(self, cfg: FusionConfig):
        self.cfg = cfg

    def __call__(self, path: str):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            return (path, str(exc), EXIT_IO)
        try:
            frame = parse_frame_bundle(text)
        except BundleError as exc:
            return (path, str(exc), _error_code(exc))
        fused = fuse_frame(frame, self.cfg)
        doc = serialize_fused(fused, frame.image_id, frame.width, frame.height)
        return {"image_id": frame.image_id, "doc": doc, "sources": source_counts(fused),
                "instances": len(fused)}


def cmd_fuse(args) -> int:
    paths = _manifest_paths(Path(args.input))
    cfg = _load_config(args.config)
    results = _parallel_map(_FuseJob(cfg), [str(p) for p in paths], args.jobs)
    errors = [r for r in results if isinstance(r, tuple)]
    if errors:
        for path, msg, _ in errors:
            print(f"{path}: {msg}", file=sys.stderr)
        raise CliError(f"{len(errors)} frame(s) rejected; nothing written", max(e[2] for e in errors))
    _check_unique((r["image_id"] for r in results), args.input)
    out = Path(args.out)
    names = []
    totals = {k: 0 for k in results[0]["sources"]} if results else source_counts([])
    for r in results:
        name = f"{_safe_id(r['image_id'])}.json"
        _write(out / name, r["doc"])
        names.append(name)
        for k, v in r["sources"].items():
            totals[k] += v
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.txt", names)
    summary = {
        "frames": len(results),
        "instances": sum(r["instances"] for r in results),
        "sources": totals,
        "config": cfg.to_dict(),
    }
    _write(out / "run_summary.json", json.dumps(summary, indent=2) + "\n")
    log.info("fused %d frames into %s", len(results), out)
    return EXIT_OK


# ---------------------------------------------------------------- evaluate


def _emit_reports(reports: dict, args) -> None:
    table = render_report(reports)
    sys.stdout.write(table)
    if args.report_table:
        _write(Path(args.report_table), table)
    if args.report_csv:
        _write(Path(args.report_csv), render_csv(reports))
    if args.report_figure:
        from hosfuse.plotting import report_figure

        Path(args.report_figure).parent.mkdir(parents=True, exist_ok=True)
        report_figure(reports, Path(args.report_figure))


def cmd_evaluate(args) -> int:
    if not args.gt:
        raise CliError("--gt is required", EXIT_INVALID)
    pred_paths = _manifest_paths(Path(args.input))
    gt_paths = _manifest_paths(Path(args.gt))
    preds = _load_docs(pred_paths, parse_fused, args.jobs)
    gts = _load_docs(gt_paths, parse_ground_truth, args.jobs)
    _check_unique((p.image_id for p in preds), "predictions")
    _check_unique((g.image_id for g in gts), "ground truth")
    try:
        report = evaluate(preds, gts)
    except EvaluationError as exc:
        raise CliError(str(exc), EXIT_INVALID) from None
    if args.report_json:
        _write(Path(args.report_json), report.to_json())
    _emit_reports({args.label: report}, args)
    return EXIT_OK


# ---------------------------------------------------------------- synth / bench


_PARAM_FLAGS = {
    "width": int, "height": int, "hands_min": int, "hands_max": int,
    "contact_prob": float, "seg_drop_prob_hand": float, "seg_drop_prob_obj": float,
    "det_jitter_px": int, "sam_split_parts": int, "sam_extra_parts": int,
}


def _load_params(args) -> SynthParams:
    doc = {}
    if args.params:
        try:
            doc = json.loads(_read_text(Path(args.params)))
        except json.JSONDecodeError as exc:
            raise CliError(f"params {args.params}: invalid JSON: {exc}", EXIT_IO) from None
        if not isinstance(doc, dict):
            raise CliError(f"params {args.params}: expected a JSON object", EXIT_INVALID)
    for name in _PARAM_FLAGS:
        value = getattr(args, name)
        if value is not None:
            doc[name] = value
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        return SynthParams.from_dict(doc)
    except (SynthError, TypeError) as exc:
        raise CliError(f"synth parameters: {exc}", EXIT_INVALID) from None


class _SynthJob:
    def __init__(self, params: SynthParams):
        self.params = params

    def __call__(self, index: int):
        try:
            gt, pred = generate_frame(self.params, index)
        except SynthError as exc:
            return (index, str(exc))
        return gt.image_id, serialize_ground_truth(gt), serialize_frame_bundle(pred)


def cmd_synth(args) -> int:
    params = _load_params(args)
    results = _parallel_map(_SynthJob(params), list(range(args.frames)), args.jobs)
    failures = [r for r in results if len(r) == 2]
    if failures:
        for index, msg in failures:
            print(f"frame {index}: {msg}", file=sys.stderr)
        raise CliError("synthetic generation failed", EXIT_INVALID)
    out = Path(args.out)
    names = []
    for image_id, gt_doc, pred_doc in results:
        _write(out / "ground_truth" / f"{image_id}.json", gt_doc)
        _write(out / "predictions" / f"{image_id}.json", pred_doc)
        names.append(f"{image_id}.json")
    (out / "ground_truth").mkdir(parents=True, exist_ok=True)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    write_manifest(out / "ground_truth" / "manifest.txt", names)
    write_manifest(out / "predictions" / "manifest.txt", names)
    _write(out / "params.json", json.dumps(params.to_dict(), indent=2) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    params = _load_params(args)
    cfg = _load_config(args.config)
    results = _parallel_map(_BenchGen(params), list(range(args.frames)), args.jobs)
    failures = [r for r in results if isinstance(r, str)]
    if failures:
        print(failures[0], file=sys.stderr)
        raise CliError("synthetic generation failed", EXIT_INVALID)
    record = run_benchmark(params, args.frames, cfg, frames=results)
    reports = {"Seg-only": record.seg_only, "Fused": record.fused}
    if args.report_json:
        doc = record.to_dict()
        doc["params"] = params.to_dict()
        doc["config"] = cfg.to_dict()
        _write(Path(args.report_json), json.dumps(doc, indent=2) + "\n")
    _emit_reports(reports, args)
    print(f"fuse+evaluate wall time: {record.wall_time_s:.3f} s over {record.n_frames} frames",
          file=sys.stderr)
    return EXIT_OK


class _BenchGen:
    def __init__(self, params):
        self.params = params

    def __call__(self, index):
        try:
            return generate_frame(self.params, index)
        except SynthError as exc:
            return f"frame {index}: {exc}"


# ---------------------------------------------------------------- render


def _render_one(path: str, out: str):
    from hosfuse.plotting import save_overlay

    frame: FusedFrame = parse_fused(Path(path).read_text(encoding="utf-8"))
    save_overlay(frame, Path(out) / f"{_safe_id(frame.image_id)}.png")
    return frame.image_id


class _RenderJob:
    def __init__(self, out: str):
        self.out = out

    def __call__(self, path: str):
        try:
            return _render_one(path, self.out)
        except BundleError as exc:
            return (path, str(exc), _error_code(exc))
        except CliError as exc:
            return (path, str(exc), exc.code)


def cmd_render(args) -> int:
    paths = _manifest_paths(Path(args.input))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _parallel_map(_RenderJob(str(out)), [str(p) for p in paths], args.jobs)
    errors = [r for r in results if isinstance(r, tuple)]
    if errors:
        for path, msg, _ in errors:
            print(f"{path}: {msg}", file=sys.stderr)
        raise CliError(f"{len(errors)} frame(s) failed to render", max(e[2] for e in errors))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", help="synthetic parameter document (JSON)")
    for name, kind in _PARAM_FLAGS.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None)


def _add_report_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--report-json", help="write the machine-readable report here")
    p.add_argument("--report-table", help="write the fixed-width table here")
    p.add_argument("--report-csv", help="write a comma-delimited table here")
    p.add_argument("--report-figure", help="write an AP chart (PNG) here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hosfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse per-frame prediction bundles")
    p.add_argument("--input", required=True, help="manifest of frame bundles (file or directory)")
    p.add_argument("--config", help="fusion config (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="five-scheme mask AP against ground truth")
    p.add_argument("--input", required=True, help="fused output directory or manifest")
    p.add_argument("--gt", required=True, help="ground-truth directory or manifest")
    p.add_argument("--label", default="Ours", help="row label in the table")
    p.add_argument("--jobs", type=int, default=1)
    _add_report_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _add_param_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="seg-only vs fused on synthetic frames")
    _add_param_flags(p)
    p.add_argument("--config", help="fusion config (JSON)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)
    _add_report_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", help="PNG overlays of fused frames")
    p.add_argument("--input", required=True, help="fused output directory or manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    if getattr(args, "frames", 1) is not None and getattr(args, "frames", 1) < 0:
        parser.error("--frames must be >= 0")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"hosfuse {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"hosfuse {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
