"""Command-line entry point.

Subcommands ``validate``, ``metric``, ``geodesic``, ``evolve``, ``spectrum`` and
``adiabatic``.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure (blow-up, chart exit, indeterminate kernel), 4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .experiments import (
    NumericalFailure,
    ValidationFailure,
    run_adiabatic,
    run_evolve,
    run_geodesic,
    run_metric,
    run_spectrum,
    run_validate,
    write_manifest,
)

log = logging.getLogger("adiabatic_lumps")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adiabatic-lumps",
                                description="Wave maps on a torus and their geodesic approximation.")
    p.add_argument("command", choices=["validate", "metric", "geodesic", "evolve", "spectrum", "adiabatic"])
    p.add_argument("--config", type=Path, help="JSON configuration (defaults are used for missing keys)")
    p.add_argument("--output", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--grid-n", type=int, help="grid points per lattice direction")
    p.add_argument("--eps", type=float, nargs="+",
                   help="epsilon values: the ladder for 'adiabatic', the first value for 'evolve'")
    p.add_argument("--seed", type=int, help="seed for randomized validation fields")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig.from_dict({})
    changes = {}
    if args.grid_n is not None:
        changes["lattice.grid_n"] = args.grid_n
    if args.eps:
        changes["eps_ladder"] = list(args.eps)
        changes["evolve.eps"] = args.eps[0]
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.output is not None:
        changes["output_dir"] = str(args.output)
    return cfg.override(**changes) if changes else cfg


_COMMANDS = {
    "validate": run_validate,
    "metric": run_metric,
    "geodesic": run_geodesic,
    "evolve": run_evolve,
    "spectrum": run_spectrum,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    before = {p.name: p.stat().st_mtime_ns for p in out.iterdir()}
    t0 = time.perf_counter()
    code, status, summary = EXIT_OK, "ok", None
    try:
        if args.command == "adiabatic":
            report = run_adiabatic(cfg, out)
            summary = report.to_dict()
            if not report.checks["all_rows_ok"]:
                code, status = EXIT_NUMERICAL, "numerical_failure"
            elif not (report.checks["err_c0_strictly_decreasing"]
                      and report.checks["err_c1_strictly_decreasing"]):
                code, status = EXIT_VALIDATION, "validation_failure"
            for w in report.warnings:
                log.warning(w)
        else:
            summary = _COMMANDS[args.command](cfg, out)
    except ValidationFailure as exc:
        code, status, summary = EXIT_VALIDATION, "validation_failure", exc.report
        print(f"validation failure: {exc}", file=sys.stderr)
    except NumericalFailure as exc:
        code, status = EXIT_NUMERICAL, "numerical_failure"
        print(f"numerical failure: {exc}", file=sys.stderr)
    wall = time.perf_counter() - t0
    written = {p.name for p in out.iterdir() if before.get(p.name) != p.stat().st_mtime_ns}
    files = sorted(written | {"manifest.json"})
    write_manifest(out, args.command, cfg, wall, files, status)
    if summary is not None:
        print(json.dumps({"schema": 1, "command": args.command, "status": status,
                          "config_hash": cfg.hash, "output_dir": str(out)}))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
