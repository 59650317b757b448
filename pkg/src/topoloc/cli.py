"""Command-line entry point: ``topoloc simulate|teach|repeat|eval``.

Every command prints one JSON line on success. Failures exit nonzero and print
one JSON line ``{"error": <kind>, "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation, pipeline
from .config import load_config
from .errors import TopolocError
from .persistence import read_meta
from .scenario import load_scenario, simulate_scenario

EXIT_CODES = {
    "ConfigurationError": 2,
    "FormatError": 3,
    "DegenerateInputError": 4,
    "PipelineAbort": 5,
    "BrokenChainError": 5,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", message, 2)


def _fail(kind: str, message: str, code: int):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def _emit(obj: dict):
    sys.stdout.write(json.dumps(obj) + "\n")


def cmd_simulate(args):
    gt = simulate_scenario(load_scenario(args.scenario), args.out)
    _emit({"command": "simulate", "out": str(args.out), "ground_truth": str(gt)})


def cmd_teach(args):
    cfg = load_config(args.config)
    graph = pipeline.run_teach(cfg, args.scans, args.out)
    _emit({"command": "teach", "out": str(args.out), "vertices": len(graph.vertices),
           "mb_per_km": evaluation.map_storage_mb_per_km(args.out)})


def cmd_repeat(args):
    cfg = load_config(args.config)
    gt = None
    if args.gt is not None:
        poses = evaluation.read_ground_truth(args.gt)
        gt = poses.__getitem__
    pipeline.run_repeat(cfg, args.map, args.scans, args.out, gt=gt)
    estimates, frames = evaluation.read_loclog(Path(args.out) / "loclog.tsv")
    _emit({"command": "repeat", "out": str(args.out), "frames": frames, "accepted": len(estimates)})


def cmd_eval(args):
    meta = read_meta(args.run)
    if meta.get("kind") == "teach":
        rep = evaluation.odometry_report(args.run, args.gt)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        evaluation.write_odometry_report(rep, args.out)
        _emit({"command": "eval", "kind": "teach", "drift": rep.drift,
               "max_translation_error": float(rep.translation_errors.max(initial=0.0)),
               "max_rotation_error": float(rep.rotation_errors.max(initial=0.0))})
        return
    rep = evaluation.report(args.run, args.gt, args.out)
    _emit({"command": "eval", "kind": "repeat", "rmse": list(rep.rmse), "acceptance_rate": rep.acceptance_rate,
           "storage_mb_per_km": rep.storage_mb_per_km})


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="topoloc", description="Teach-and-repeat lidar/radar localization")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate the scans of a scenario file")
    s.add_argument("--scenario", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("teach", help="build a map from a scan directory")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--scans", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_teach)

    s = sub.add_parser("repeat", help="localize a scan directory against a map")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--map", required=True, type=Path)
    s.add_argument("--scans", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--gt", type=Path, help="ground truth table; fills the error columns of the localization log")
    s.set_defaults(func=cmd_repeat)

    s = sub.add_parser("eval", help="score a teach or repeat run against ground truth")
    s.add_argument("--run", required=True, type=Path)
    s.add_argument("--gt", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except TopolocError as exc:
        kind = type(exc).__name__
        _fail(kind, str(exc), EXIT_CODES.get(kind, 1))
    except OSError as exc:
        _fail("IOError", str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
