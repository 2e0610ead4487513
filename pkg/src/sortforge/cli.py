"""``sortforge`` command line.

Every subcommand reads one JSON config (``--config``) and writes its results
under ``--out``. Relative paths in the config resolve against the config
file's directory.

Exit codes: 0 success, 1 usage or config error, 2 batch finished with
per-item failures, 3 fatal I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from . import __version__
from .coloradapt import Mode
from .imgcore import BoundingBox
from .metrics import format_similarity, similarity_json, similarity_report
from .pipeline import (EventLog, ManifestError, PipelineConfig, DatasetIndex, evaluate_annotations,
                       format_annotation_report, format_collection_time, ingest, load_events,
                       propagate_boxes, report_collection_time, run_extraction, run_pipeline,
                       similarity_samples, verify_index)
from .sorter import ConveyorLayout, PolicyMode, generate_stream, load_stream, simulate

EXIT_OK, EXIT_USAGE, EXIT_FAILURES, EXIT_IO = 0, 1, 2, 3
SCHEMA_VERSION = 1

log = logging.getLogger("sortforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Config:
    def __init__(self, path: Path):
        self.path = path
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            self.doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(self.doc, dict):
            raise UsageError(f"{path}: top level must be an object")

    def resolve(self, rel) -> Path:
        return (self.path.parent / rel).resolve()

    def section(self, name: str) -> dict:
        value = self.doc.get(name, {})
        if not isinstance(value, dict):
            raise UsageError(f"{self.path}: '{name}' must be an object")
        return value

    def require(self, section: str, key: str):
        sec = self.section(section)
        if key not in sec:
            raise UsageError(f"{self.path}: missing '{section}.{key}'")
        return sec[key]

    def manifest(self):
        if "manifest" not in self.doc:
            raise UsageError(f"{self.path}: missing 'manifest'")
        return ingest(self.resolve(self.doc["manifest"]))

    def pipeline(self) -> PipelineConfig:
        try:
            return PipelineConfig.from_dict(self.doc)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{self.path}: {exc}") from exc


def _jobs(args) -> int:
    env = os.environ.get("SORTFORGE_JOBS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"SORTFORGE_JOBS must be an integer, got {env!r}") from None
    else:
        value = args.jobs
    if value < 1:
        raise UsageError("jobs must be >= 1")
    return value


def _write_json(path: Path, doc: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, **doc}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _finish(index: DatasetIndex, out: Path) -> int:
    print(f"{len(index.samples)} samples, {len(index.failures)} failures -> {out / 'index.json'}")
    for f in index.failures:
        print(f"  failed {f['capture_id']}: {f['reason']}", file=sys.stderr)
    return EXIT_FAILURES if index.failures else EXIT_OK


def cmd_extract(args, cfg: _Config) -> int:
    events = EventLog()
    with events.phase("*", "ingest"):
        manifest = cfg.manifest()
    index = run_extraction(manifest, cfg.pipeline(), args.out, jobs=_jobs(args), events=events)
    if args.events:
        events.write(args.events)
    return _finish(index, args.out)


def cmd_adapt(args, cfg: _Config) -> int:
    events = EventLog()
    with events.phase("*", "ingest"):
        manifest = cfg.manifest()
    config = cfg.pipeline()
    mode = Mode.parse(args.mode) if args.mode else config.mode
    index = run_pipeline(manifest, config, args.out, mode=mode, jobs=_jobs(args), events=events)
    if args.events:
        events.write(args.events)
    return _finish(index, args.out)


def cmd_export(args, cfg: _Config) -> int:
    """Verify a dataset directory and copy it, with its files, under --out."""
    src = cfg.resolve(cfg.require("export", "dataset"))
    index = DatasetIndex.load(src / "index.json")
    problems = verify_index(src)
    for s in index.samples:
        for key in ("image", "mask", "alpha"):
            rel = s.get(key)
            if rel is None or not (src / rel).is_file():
                continue
            dest = args.out / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src / rel, dest)
    (args.out / "index.json").write_text(index.to_json(), encoding="utf-8")
    _write_json(args.out / "export_report.json",
                {"samples": len(index.samples), "failures": len(index.failures), "problems": problems})
    for p in problems:
        print(f"  {p}", file=sys.stderr)
    print(f"exported {len(index.samples)} samples, {len(problems)} problems -> {args.out}")
    return EXIT_FAILURES if problems or index.failures else EXIT_OK


def cmd_eval_annotations(args, cfg: _Config) -> int:
    auto = cfg.resolve(cfg.require("evaluation", "auto_dir"))
    manual = cfg.resolve(cfg.require("evaluation", "manual_dir"))
    report = evaluate_annotations(auto, manual)
    text = format_annotation_report(report)
    (args.out / "annotations.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")
    (args.out / "annotations.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    excluded = report["excluded"]
    return EXIT_FAILURES if excluded["missing_manual"] or excluded["missing_auto"] else EXIT_OK


def cmd_similarity(args, cfg: _Config) -> int:
    manifest = cfg.manifest()
    samples, refs = similarity_samples(manifest, cfg.pipeline(), jobs=_jobs(args))
    if not samples:
        print("no capture could be extracted", file=sys.stderr)
        return EXIT_FAILURES
    report = similarity_report(samples, refs)
    text = format_similarity(report)
    (args.out / "similarity.json").write_text(similarity_json(report), encoding="utf-8")
    (args.out / "similarity.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_propagate(args, cfg: _Config) -> int:
    sec = cfg.section("propagation")
    try:
        boxes = [(BoundingBox(*b["box"]), str(b["label"])) for b in cfg.require("propagation", "boxes")]
        frames = propagate_boxes(
            boxes, float(sec.get("v_c", 0.05)), float(sec.get("fps", 10.0)),
            float(sec.get("px_per_m", 1000.0)), int(cfg.require("propagation", "n_frames")),
            (int(cfg.require("propagation", "frame_width")), int(cfg.require("propagation", "frame_height"))),
            int(sec.get("direction", 1)))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{cfg.path}: propagation: {exc}") from exc
    doc = {"frames": [{"frame": t, "boxes": [{"box": list(b.as_tuple()), "label": lab,
                                              "provenance": "PROPAGATED"} for b, lab in kept]}
                      for t, kept in enumerate(frames)]}
    _write_json(args.out / "propagation.json", doc)
    print(f"{len(frames)} frames -> {args.out / 'propagation.json'}")
    return EXIT_OK


def cmd_simulate(args, cfg: _Config) -> int:
    sec = cfg.section("simulation")
    try:
        layout = ConveyorLayout(**sec.get("layout", {}))
    except TypeError as exc:
        raise UsageError(f"{cfg.path}: simulation.layout: {exc}") from exc
    if "stream" in sec:
        stream = load_stream(cfg.resolve(sec["stream"]))
    else:
        gen = sec.get("generate", {})
        stream = generate_stream(int(gen.get("n", 20)), seed=args.seed,
                                 spacing=float(gen.get("spacing", 6.0)), layout=layout)
    policy = PolicyMode.parse(args.policy or sec.get("policy", "literal"))
    report = simulate(stream, layout, policy, tick=float(sec.get("tick", 0.05)), seed=args.seed,
                      force_pick=bool(sec.get("force_pick", False)),
                      stochastic=bool(sec.get("stochastic", False)))
    doc = report.to_dict()
    doc["policy"] = policy.value
    doc["seed"] = args.seed
    _write_json(args.out / "simulation.json", doc)
    print(f"{report.spawned} items: {report.action_counts}, mean handling "
          f"{report.mean_handling_time:.2f} s, makespan {report.makespan:.2f} s")
    return EXIT_OK


def cmd_timing(args, cfg: _Config | None) -> int:
    report = report_collection_time(load_events(args.events))
    _write_json(args.out / "collection_time.json", report)
    print(format_collection_time(report), end="")
    return EXIT_OK


COMMANDS = {
    "extract": (cmd_extract, "automatic annotation of every capture"),
    "adapt": (cmd_adapt, "extract, scale, synthesize background and adapt colors"),
    "export": (cmd_export, "verify a dataset directory and copy it"),
    "eval-annotations": (cmd_eval_annotations, "score automatic masks against hand-labeled ones"),
    "similarity": (cmd_similarity, "EMD / Bhattacharyya report per adaptation mode"),
    "propagate": (cmd_propagate, "propagate first-frame boxes through a conveyor video"),
    "simulate": (cmd_simulate, "run the sorting policy over a conveyed item stream"),
    "timing": (cmd_timing, "per-phase collection time from an event log"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sortforge", description="Dataset collection and sorting tools for conveyor waste.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", type=Path, required=name != "timing")
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--jobs", type=int, default=1)
        if name in ("extract", "adapt", "timing"):
            p.add_argument("--events", type=Path, required=name == "timing",
                           help="JSON-lines phase timing log")
        if name == "adapt":
            p.add_argument("--mode", choices=[m.value for m in Mode])
        if name == "simulate":
            p.add_argument("--policy", choices=[m.value for m in PolicyMode])
            p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, _ = COMMANDS[args.command]
    try:
        cfg = _Config(args.config) if args.config is not None else None
        args.out.mkdir(parents=True, exist_ok=True)
        return fn(args, cfg)
    except (UsageError, ManifestError) as exc:
        print(f"sortforge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"sortforge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"sortforge: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
