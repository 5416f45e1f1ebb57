"""Command-line entry point: ``simulate``, ``sweep``, ``oracle-check`` and ``synth``.

Exit codes: 0 success, 1 bad configuration, 2 runtime failure, 3 oracle mismatch.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .domain import ValidationError
from .ingest import IngestionError, load_household, load_profile_config, synthesize_traces, write_traces_csv
from .metrics import write_report
from .milp import MAX_CELLS, brute_force, dump_instance, objective_exact, random_instance, solve
from .policies import Baseline, FixedThresholds, OptimizedThresholds, policy_from_name
from .rollout import DEFAULT_RATE_PER_KWH, ExperimentConfig, run_experiment, sweep
from .simkernel import write_ledger

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_MISMATCH = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage mistakes are configuration errors (exit 1), not argparse's default 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


@dataclass
class RunManifest:
    command_line: list[str]
    config_hash: str
    seed: int
    started: str
    finished: str = ""
    versions: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    def write(self, directory: Path) -> None:
        with open(directory / "manifest.json", "w") as fh:
            json.dump(self.__dict__, fh, indent=2)


def _config_hash(args: argparse.Namespace) -> str:
    keys = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "jobs")}
    return hashlib.sha256(json.dumps(keys, sort_keys=True, default=str).encode()).hexdigest()[:12]


def _run_dir(args: argparse.Namespace, argv: list[str]) -> tuple[Path, RunManifest]:
    h = _config_hash(args)
    now = datetime.now()
    directory = Path(args.out) / f"{now:%Y%m%dT%H%M%S}-{h}"
    directory.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command_line=list(argv),
        config_hash=h,
        seed=args.seed,
        started=now.isoformat(timespec="seconds"),
        versions={"prepaid_ration": __version__, "numpy": np.__version__, "python": platform.python_version()},
    )
    return directory, manifest


def _finish(directory: Path, manifest: RunManifest, outputs: list[str]) -> None:
    manifest.finished = datetime.now().isoformat(timespec="seconds")
    manifest.outputs = [str(directory / o) for o in outputs]
    manifest.write(directory)


def _parse_priorities(text: str | None) -> dict | None:
    if not text:
        return None
    out = {}
    for part in text.split(","):
        key, _, rank = part.partition("=")
        if not rank:
            raise ConfigError(f"bad --priorities entry {part!r}; expected ID=RANK")
        try:
            out[key.strip()] = int(rank)
        except ValueError:
            raise ConfigError(f"bad rank in --priorities entry {part!r}") from None
    return out


def _parse_list(text: str, *, percent: bool) -> list:
    """``lo:hi:step`` (inclusive) or a comma list; percent values become fractions."""
    text = text.strip()
    if ":" in text:
        try:
            lo, hi, step = (float(v) for v in text.split(":"))
        except ValueError:
            raise ConfigError(f"bad range {text!r}; expected lo:hi:step") from None
        if step <= 0 or hi < lo:
            raise ConfigError(f"range {text!r} is empty")
        values = [float(v) for v in np.arange(lo, hi + step / 2, step)]
    else:
        try:
            values = [float(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad list {text!r}") from None
    if not values:
        raise ConfigError(f"empty list {text!r}")
    if len(set(values)) != len(values):
        raise ConfigError(f"list {text!r} repeats a value")
    if percent:
        return [round(v / 100.0 if v > 1.5 else v, 10) for v in values]
    if any(v != int(v) for v in values):
        raise ConfigError(f"frequencies must be integers, got {text!r}")
    return [int(v) for v in values]


def _base_config(args, policy) -> ExperimentConfig:
    grid, loads, traces = load_household(args.trace, seed=args.seed, priorities=_parse_priorities(args.priorities),
                                         num_days=args.days)
    return ExperimentConfig(
        policy=policy,
        recharge_fraction=args.amount,
        recharge_frequency=args.frequency,
        grid=grid,
        loads=loads,
        traces=traces,
        rate_per_kwh=args.rate,
        horizon_days=args.horizon_days,
        seed=args.seed,
        source=str(args.trace or "reference"),
    )


def cmd_simulate(args, argv) -> int:
    policy = policy_from_name(args.policy, beta=args.beta, horizon_days=args.horizon_days)
    config = _base_config(args, policy)
    directory, manifest = _run_dir(args, argv)
    result = run_experiment(config)
    outputs = ["report.json", "report.csv"]
    write_report(result.report, directory / "report.json", directory / "report.csv")
    if args.ledger:
        write_ledger(result.simulation, directory / "ledger.csv")
        outputs.append("ledger.csv")
    if result.day_stats:
        with open(directory / "solver_stats.json", "w") as fh:
            json.dump(result.day_stats, fh, indent=1)
        outputs.append("solver_stats.json")
    _finish(directory, manifest, outputs)
    rep = result.report
    print(f"{config.label()}: PSF {rep.psf:.4f}, energy {rep.total_energy_fraction:.1%} of demand, "
          f"{rep.disconnection_count} disconnection(s)")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(directory)
    return EXIT_OK


def _policies(text: str):
    names = ["baseline", "fixed", "optimal"] if text == "all" else [p.strip() for p in text.split(",")]
    return [policy_from_name(n) for n in names]


def cmd_sweep(args, argv) -> int:
    if args.amounts and args.amount_given:
        raise ConfigError("give either --amount or --amounts, not both")
    if args.frequencies and args.frequency_given:
        raise ConfigError("give either --frequency or --frequencies, not both")
    amounts = _parse_list(args.amounts, percent=True) if args.amounts else [args.amount]
    freqs = _parse_list(args.frequencies, percent=False) if args.frequencies else [args.frequency]
    policies = [replace(p, beta=args.beta) if isinstance(p, FixedThresholds)
                else replace(p, horizon_days=args.horizon_days) if isinstance(p, OptimizedThresholds) else p
                for p in _policies(args.policies)]
    base = _base_config(args, Baseline())
    configs = [replace(base, policy=p, recharge_fraction=a, recharge_frequency=f)
               for p in policies for a in amounts for f in freqs]
    directory, manifest = _run_dir(args, argv)
    rows = sweep(configs, jobs=args.jobs)
    with open(directory / "sweep_psf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "amount", "frequency", "psf", "total_energy_fraction", "error"])
        for r in rows:
            w.writerow([r.policy, repr(float(r.recharge_fraction)), r.recharge_frequency,
                        "" if r.report is None else repr(float(r.report.psf)),
                        "" if r.report is None else repr(float(r.report.total_energy_fraction)), r.error or ""])
    with open(directory / "sweep_disconnects.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "amount", "frequency", "disconnection_count"])
        for r in rows:
            w.writerow([r.policy, repr(float(r.recharge_fraction)), r.recharge_frequency,
                        "" if r.report is None else r.report.disconnection_count])
    _finish(directory, manifest, ["sweep_psf.csv", "sweep_disconnects.csv"])
    print(f"{'policy':<9} {'amount':>6} {'freq':>4} {'PSF':>7} {'disc':>4}")
    for r in rows:
        if r.report is None:
            print(f"{r.policy:<9} {r.recharge_fraction:>6.2f} {r.recharge_frequency:>4}  failed: {r.error}")
        else:
            print(f"{r.policy:<9} {r.recharge_fraction:>6.2f} {r.recharge_frequency:>4} "
                  f"{r.report.psf:>7.4f} {r.report.disconnection_count:>4}")
    print(directory)
    failed = sum(r.error is not None for r in rows)
    return EXIT_RUNTIME if failed == len(rows) else EXIT_OK


def cmd_oracle_check(args, argv) -> int:
    if args.n < 1:
        raise ConfigError("--n must be at least 1")
    cells = args.loads * args.steps
    if cells > MAX_CELLS:
        raise ConfigError(f"{args.loads} loads x {args.steps} steps = {cells} cells exceeds the "
                          f"brute-force cap of {MAX_CELLS}")
    if args.steps % args.days:
        raise ConfigError("--steps must be a multiple of --days")
    for i in range(args.n):
        rng = np.random.default_rng([args.seed, i])
        inst = random_instance(rng, num_loads=args.loads, num_steps=args.steps, num_days=args.days,
                               threshold_floor=None if args.no_floor else 0.0)
        got = objective_exact(inst, solve(inst).actuation)
        want = objective_exact(inst, brute_force(inst).actuation)
        if got != want:
            path = Path(args.dump_dir) / f"oracle_mismatch_{args.seed}_{i}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            dump_instance(inst, path)
            print(f"instance {i}: solver {float(got):.12f} vs brute force {float(want):.12f}; dumped {path}",
                  file=sys.stderr)
            return EXIT_MISMATCH
    print(f"{args.n}/{args.n} match")
    return EXIT_OK


def cmd_synth(args, argv) -> int:
    try:
        start = datetime.fromisoformat(args.start)
    except ValueError:
        raise ConfigError(f"bad --start timestamp {args.start!r}") from None
    grid, loads, profiles = load_profile_config(args.profiles, args.seed)
    traces = synthesize_traces(profiles, grid)
    write_traces_csv(traces, grid, args.output, start)
    for tr in traces:
        print(f"{tr.load_id}: {tr.energy_kwh(grid.step_hours):.2f} kWh, peak {tr.power.max():.0f} W")
    return EXIT_OK


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trace", help="trace CSV or synthetic profile TOML (default: built-in reference month)")
    p.add_argument("--priorities", help="ID=RANK,... for CSV traces (rank 1 = most important)")
    p.add_argument("--days", type=int, default=30, help="horizon length in days for CSV traces")
    p.add_argument("--rate", type=float, default=DEFAULT_RATE_PER_KWH, help="tariff in $/kWh")
    p.add_argument("--beta", type=float, default=0.05, help="fixed-threshold scale")
    p.add_argument("--horizon-days", type=int, default=7, help="optimisation window in days")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs", help="parent directory for run outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prepaid-ration", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one experiment")
    p.add_argument("--policy", choices=["baseline", "fixed", "optimal"], default="optimal")
    p.add_argument("--amount", type=float, default=0.70, help="monthly recharge as a fraction of full-demand cost")
    p.add_argument("--frequency", type=int, default=5, help="recharges per month")
    p.add_argument("--ledger", action="store_true", help="also write the per-step ledger CSV")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a grid of experiments")
    p.add_argument("--policies", default="all", help="all, or a comma list of baseline,fixed,optimal")
    p.add_argument("--amounts", help="percent range lo:hi:step or comma list")
    p.add_argument("--frequencies", help="comma list or lo:hi:step")
    p.add_argument("--amount", type=float, default=None)
    p.add_argument("--frequency", type=int, default=None)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle-check", help="compare the solver with brute force on toy instances")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--loads", type=int, default=2)
    p.add_argument("--steps", type=int, default=8, help="steps in the whole window")
    p.add_argument("--days", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-floor", action="store_true", help="allow negative thresholds")
    p.add_argument("--dump-dir", default=".")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("synth", help="write a synthetic trace CSV from a profile TOML")
    p.add_argument("profiles")
    p.add_argument("-o", "--output", default="traces.csv")
    p.add_argument("--start", default="2024-01-01T00:00:00")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "sweep":
            args.amount_given = args.amount is not None
            args.frequency_given = args.frequency is not None
            args.amount = 0.70 if args.amount is None else args.amount
            args.frequency = 5 if args.frequency is None else args.frequency
        return args.func(args, argv)
    except (ConfigError, ValidationError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything past validation is a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
