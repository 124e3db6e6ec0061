"""Command-line front end: ``python -m fluorsqueeze <command> --scenario file.yaml``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 aborted
integration, 5 optimisation found no stable point.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .core_types import (
    FluorsqueezeError,
    IntegrationError,
    NumericalError,
    OptimizationError,
    ParameterError,
    RecordMismatchError,
    ScenarioError,
)
from .dynamics import equilibrium, relaxation_rates, validate
from .optimize import OptimizeOptions, optimize, sensitivity_scan, sweep_detection_fractions
from .scenario import load_scenario, load_unvalidated_params
from .spectrum import DEFAULT_MU_HALF_WIDTH, DEFAULT_MU_POINTS, spectrum_scan
from .tables import write_frame
from .trajectories import (
    DEFAULT_BLOCK,
    THREADS_ENV,
    SmeConfig,
    estimate_spectrum,
    file_checksum,
    read_record,
    record_filename,
    simulate_ensemble,
    write_record,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_INTEGRATION = 4
EXIT_OPTIMIZATION = 5

MANIFEST = "manifest.json"
ESTIMATE_MU_RANGE = (-3.0, 3.0)
ESTIMATE_POINTS = 41


def _emit(text: str, out: Path | None):
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        logger.info("Wrote %s", out)


def _emit_json(payload, out: Path | None):
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", out)


def _emit_frame(df: pd.DataFrame, out: Path | None, fmt: str, meta: dict, title: str):
    if out is None:
        sys.stdout.write(write_frame(df, None, fmt, meta, title))
    else:
        write_frame(df, out, fmt, meta, title)
        logger.info("Wrote series → %s", out)


def _channel(args, scenario) -> int:
    if args.channel is not None:
        return args.channel
    return scenario.control.channel if scenario.control else 1


# ---------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------


def cmd_spectrum(args) -> int:
    scenario = load_scenario(args.scenario, args.strict)
    p = scenario.params
    channel = _channel(args, scenario)
    w = DEFAULT_MU_HALF_WIDTH * p.gamma
    mu_min = -w if args.mu_min is None else args.mu_min
    mu_max = w if args.mu_max is None else args.mu_max
    series = spectrum_scan(p, channel, mu_min, mu_max, args.points)
    meta = {"scenario": scenario.label, "channel": channel, "kind": series.kind, "params": p.as_dict()}
    _emit_frame(series.to_frame(), args.out, args.format, meta, "fluorsqueeze spectrum")
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    scenario = load_scenario(args.scenario, args.strict)
    p = scenario.params
    x = equilibrium(p)
    rates = relaxation_rates(p)
    payload = {
        "x": x.x,
        "y": x.y,
        "z": x.z,
        "delta_omega_c": p.delta_omega_c,
        "relaxation_rates": [[float(r.real), float(r.imag)] for r in rates],
    }
    _emit_json(payload, args.out)
    return EXIT_OK


def _sme_config(args, scenario) -> SmeConfig:
    base = scenario.sme or SmeConfig()
    changes = {
        "n_traj": args.trajectories,
        "dt": args.dt,
        "t_final": args.t_final,
        "seed": args.seed,
        "record_stride": args.record_stride,
    }
    try:
        return dataclasses.replace(base, **{k: v for k, v in changes.items() if v is not None}).validate()
    except ValueError as exc:
        raise ScenarioError(f"sme: {exc}") from exc


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario, args.strict)
    p = scenario.params
    cfg = _sme_config(args, scenario)
    records = simulate_ensemble(p, cfg, workers=args.threads, block_size=args.block_size)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in records:
        path = write_record(r, out_dir / record_filename(r.traj_index))
        entries.append(
            {
                "file": path.name,
                "traj_index": r.traj_index,
                "projections": r.projections,
                "max_violation": r.max_violation,
                "sha256": file_checksum(path),
            }
        )

    half = len(records[0].times) // 2
    late = np.concatenate([r.states[half:] for r in records])
    manifest = {
        "scenario": scenario.label,
        "params": p.as_dict(),
        "seed": cfg.seed,
        "dt": cfg.dt,
        "t_final": cfg.t_final,
        "n_traj": cfg.n_traj,
        "record_stride": cfg.record_stride,
        "initial": cfg.initial_label(),
        "total_projections": sum(e["projections"] for e in entries),
        "time_averaged_state": late.mean(axis=0).tolist(),
        "records": entries,
    }
    _emit_json(manifest, out_dir / MANIFEST)
    logger.info("Wrote %d records to %s", len(records), out_dir)
    return EXIT_OK


def load_record_dir(directory: Path):
    directory = Path(directory)
    files = sorted(directory.glob("traj_*.csv")) if directory.is_dir() else []
    if not files:
        raise RecordMismatchError(f"no trajectory records in {directory}")
    manifest_path = directory / MANIFEST
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        listed = {e["file"]: e["sha256"] for e in manifest.get("records", [])}
        for f in files:
            if f.name not in listed:
                raise RecordMismatchError(f"{f.name} is not listed in the manifest")
            if file_checksum(f) != listed[f.name]:
                raise RecordMismatchError(f"{f.name} does not match its manifest checksum")
    return [read_record(f) for f in files]


def cmd_estimate(args) -> int:
    records = load_record_dir(args.records)
    mu_min = ESTIMATE_MU_RANGE[0] if args.mu_min is None else args.mu_min
    mu_max = ESTIMATE_MU_RANGE[1] if args.mu_max is None else args.mu_max
    if args.points < 2 or not mu_min < mu_max:
        raise ScenarioError(f"bad frequency grid [{mu_min}, {mu_max}] with {args.points} points")
    mus = np.linspace(mu_min, mu_max, args.points)
    channel = args.channel or 1
    series = estimate_spectrum(records, channel, mus)
    meta = {"channel": channel, "kind": series.kind, "params": records[0].params.as_dict(), **series.meta}
    _emit_frame(series.to_frame(), args.out, args.format, meta, "fluorsqueeze spectrum estimate")
    return EXIT_OK


def _options(args, scenario) -> OptimizeOptions:
    opts = scenario.options
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "starts", None) is not None:
        changes["starts"] = args.starts
    changes["workers"] = args.threads
    return dataclasses.replace(opts, **changes)


def cmd_optimize(args) -> int:
    scenario = load_scenario(args.scenario, args.strict)
    if scenario.control is None:
        raise ScenarioError("missing key control")
    result = optimize(scenario.params, scenario.control, _options(args, scenario))
    payload = {"scenario": scenario.label, **result.as_dict()}
    _emit_json(payload, args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    p = load_unvalidated_params(args.scenario)
    violations = validate(p, args.strict)
    _emit_json([v.as_dict() for v in violations], args.out)
    return EXIT_INVALID if any(v.severity == "error" for v in violations) else EXIT_OK


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario, args.strict)
    if scenario.control is None:
        raise ScenarioError("missing key control")
    opts = _options(args, scenario)
    if args.kind == "fractions":
        df = sweep_detection_fractions(scenario.params, scenario.control, args.values, args.side_total, opts)
    else:
        reopt = opts if args.reoptimize else None
        df = sensitivity_scan(scenario.params, scenario.control, args.kind, args.values, reopt)
    meta = {"scenario": scenario.label, "sweep": args.kind, "channel": scenario.control.channel}
    _emit_frame(df, args.out, args.format, meta, "fluorsqueeze sweep")
    return EXIT_OK


# ---------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluorsqueeze", description="Squeezing in feedback-controlled fluorescence")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings only")
    parser.add_argument("--threads", type=int, default=None, help=f"Worker threads (default ${THREADS_ENV} or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--scenario", type=Path, required=True, help="Scenario YAML file")
        p.add_argument("--out", type=Path, required=out_required, default=None, help="Output path (default stdout)")
        p.add_argument("--strict", action="store_true", help="Require |alpha_0|^2 > 0")

    def grid(p, points):
        p.add_argument("--channel", type=int, choices=(1, 2), default=None)
        p.add_argument("--mu-min", type=float, default=None)
        p.add_argument("--mu-max", type=float, default=None)
        p.add_argument("--points", type=int, default=points)
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("spectrum", help="Analytic spectrum on a frequency grid")
    common(p)
    grid(p, DEFAULT_MU_POINTS)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("equilibrium", help="Stationary Bloch vector")
    common(p)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("simulate", help="Quantum trajectories with photocurrents")
    common(p, out_required=True)
    p.add_argument("--trajectories", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-final", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--record-stride", type=int, default=None)
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK, help="Trajectories integrated together per thread")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="Monte Carlo spectrum from trajectory records")
    p.add_argument("--records", type=Path, required=True, help="Directory written by 'simulate'")
    p.add_argument("--out", type=Path, default=None)
    grid(p, ESTIMATE_POINTS)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("optimize", help="Optimise the free controls of a scenario")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--starts", type=int, default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("validate", help="List parameter violations")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="Objective against noise strength or detection split")
    common(p)
    p.add_argument("--kind", choices=("k_d", "n_bar", "fractions"), required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--side-total", type=float, default=0.9)
    p.add_argument("--reoptimize", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--starts", type=int, default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sweep)
    return parser


def configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.func(args)
    except ParameterError as exc:
        for v in exc.violations:
            print(f"invalid parameter {v.key}: {v.message}", file=sys.stderr)
        return EXIT_INVALID
    except (ScenarioError, RecordMismatchError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except IntegrationError as exc:
        print(f"integration aborted: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OptimizationError as exc:
        print(f"optimisation failed: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZATION
    except (FluorsqueezeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
