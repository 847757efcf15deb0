"""Command line entry point ``entropy-decay``.

Exit codes: 0 every verdict passed, 2 a verdict failed (or a command's
precondition is unmet), 3 configuration error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .experiments import (
    GNFailure,
    PipelineError,
    RunReport,
    _json_default,
    cmd_counterexample,
    cmd_decay,
    cmd_periodic_decay,
    cmd_pipeline,
    write_outputs,
)
from .flux import affine_structure, check_gn, subspace_family
from .lattice import CertificateError, random_avoiding_lattice
from .solver import CFLError

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("entropy_decay")


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.lattice.seed = int(args.seed)
    return cfg


def _print_summary(report: RunReport) -> None:
    for name, v in report.verdicts.items():
        status = {True: "PASS", False: "FAIL", None: "info"}[v.get("passed")]
        print(f"{status:4s}  {name}")


def _finish(report: RunReport, args, plots: bool) -> int:
    if args.out_dir:
        write_outputs(report, args.out_dir, plots=plots)
    _print_summary(report)
    return EXIT_OK if report.passed else EXIT_VERDICT


def run_command(args) -> int:
    cfg = _load(args)
    scale = float(args.resolution_scale)
    if not scale > 0:
        raise ConfigError("--resolution-scale must be positive")
    if args.command == "check-gn":
        return _check_gn(cfg, args)
    if args.command == "lattice-cert":
        return _lattice_cert(cfg, args)
    commands = {
        "decay": lambda: cmd_decay(cfg, scale),
        "periodic-decay": lambda: cmd_periodic_decay(cfg, scale),
        "counterexample": lambda: cmd_counterexample(cfg, scale),
        "pipeline": lambda: cmd_pipeline(cfg, scale),
    }
    try:
        report = commands[args.command]()
    except (GNFailure, PipelineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.report is not None:
            exc.report.extra["error"] = str(exc)
            if getattr(exc, "stage", None):
                exc.report.extra["failed_stage"] = exc.stage
            exc.report.verdict("aborted", False, reason=str(exc))
            _finish(exc.report, args, plots=False)
        cause = exc.__cause__
        return EXIT_NUMERIC if isinstance(cause, CFLError) else EXIT_VERDICT
    return _finish(report, args, plots=cfg.output.plots)


def _emit(obj: dict, args) -> None:
    text = json.dumps(obj, indent=2, default=_json_default)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text + "\n")
    print(text)


def _check_gn(cfg: ExperimentConfig, args) -> int:
    structure = affine_structure(cfg.flux)
    verdict = check_gn(structure)
    obj = {
        "command": "check-gn",
        "gn": verdict.to_json(),
        "F": structure.F.to_json(),
        "affine_intervals": [
            {"interval": [iv.lo, iv.hi], "slope": iv.slope, "offset": iv.offset} for iv in structure.intervals
        ],
    }
    _emit(obj, args)
    return EXIT_OK if verdict.holds else EXIT_VERDICT


def _lattice_cert(cfg: ExperimentConfig, args) -> int:
    lat = cfg.lattice
    subspaces = subspace_family(cfg.flux)
    try:
        L1, cert = random_avoiding_lattice(subspaces, lat.R, lat.delta, lat.seed, cfg.dim, lat.max_retries)
    except CertificateError as exc:
        _emit({"command": "lattice-cert", "passed": False, "error": str(exc), "xi": exc.xi, "subspace": exc.alpha}, args)
        return EXIT_VERDICT
    obj = {
        "command": "lattice-cert",
        "passed": cert.passed,
        "certificate": cert.to_json(),
        "period_basis": np.asarray(L1.dual().basis),
        "subspaces": [{"interval": list(s.interval), "basis": s.basis} for s in subspaces],
    }
    _emit(obj, args)
    return EXIT_OK if cert.passed else EXIT_VERDICT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entropy-decay",
        description="Decay experiments for entropy solutions of scalar conservation laws.",
    )
    parser.add_argument(
        "command",
        choices=["decay", "periodic-decay", "counterexample", "pipeline", "check-gn", "lattice-cert"],
    )
    parser.add_argument("--config", type=Path, help="scenario JSON file")
    parser.add_argument("--seed", type=int, default=None, help="override lattice.seed")
    parser.add_argument("--out-dir", type=Path, default=None, help="directory for report.json, series.csv, plots, states")
    parser.add_argument("--resolution-scale", type=float, default=1.0, help="divide the grid spacing h by this factor")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CFLError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
