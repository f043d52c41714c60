"""Command line entry point: ``wflow run``, ``wflow check`` and ``wflow list-models``."""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ExperimentConfig, load_config
from .fokker_planck import FokkerPlanckSolver, Grid, initial_density
from .functionals import flow_series
from .model import Registry, check_admissibility, default_registry
from .sde import StepConfig, initial_ensemble, run as run_particles
from .verify import CHECKS, IdentityReport, ReportLog

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_ADMISSIBILITY = 3
EXIT_RUNTIME = 4


def worker_count() -> int:
    raw = os.environ.get("WFLOW_THREADS")
    if raw is None:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"WFLOW_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"WFLOW_THREADS must be a positive integer, got {raw!r}")
    return value


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``heat_1d.cfg``."""
    return Path(__file__).parent / "configs" / name


def _admissibility_summary(report) -> str:
    lines = ["admissibility check failed:"]
    for c in report.failures:
        lines.append(f"  condition {c.index} ({c.name}): {c.detail}")
    return "\n".join(lines)


def solver_pass(cfg: ExperimentConfig, writer: io.OutputWriter) -> None:
    """Grid and particle runs whose outputs are written as data files."""
    problem = cfg.problem
    s = cfg.solver
    grid = Grid.uniform(problem.domain_box, s["nodes"])
    times = np.linspace(0.0, problem.horizon, s["checkpoints"])
    path = FokkerPlanckSolver(problem, grid).solve(initial_density(problem, grid), times)
    writer.csv("series.csv", io.write_series_csv, flow_series(path, problem))
    writer.csv("density_T.csv", io.write_density_csv, path.field(len(times) - 1))
    writer.snapshot("density_0.bin", path.field(0))
    writer.snapshot("density_T.bin", path.field(len(times) - 1))
    if s["particles"] > 0:
        ens = initial_ensemble(problem, s["particles"], s["seed"])
        snap_times = [0.0, problem.horizon]
        ens = run_particles(ens, problem, StepConfig(s["dt"]), problem.horizon, store_times=snap_times)
        writer.snapshot("particles_T.bin", ens)
        k = min(cfg.csv_particles, ens.size)
        if k:
            _, hist = ens.stacked_history()
            writer.csv("particles.csv", io.write_particles_csv, snap_times, hist[:, :k], ens.particle_ids[:k])


def _run_check(plan, problem) -> IdentityReport:
    return CHECKS[plan.name](problem, **plan.kwargs)


def summary_text(reports: list[IdentityReport]) -> str:
    lines = [f"{'check':<20} {'verdict':<8} {'residual':>12} {'tol':>10} {'seconds':>9}"]
    for r in reports:
        lines.append(f"{r.name:<20} {r.verdict:<8} {r.residual:>12.4g} {r.tolerance:>10.3g} "
                     f"{r.runtime_seconds:>9.1f}")
    passed = sum(r.passed for r in reports)
    lines.append(f"{passed}/{len(reports)} checks passed")
    return "\n".join(lines) + "\n"


def execute(cfg: ExperimentConfig, dry_run: bool = False, out=None) -> int:
    """Run the configured experiment; returns the process exit status."""
    out = out or sys.stdout
    problem = cfg.problem
    admissible = check_admissibility(problem)
    if dry_run:
        for line in cfg.plan():
            print(line, file=out)
        status = "ok" if admissible.passed else "FAILED"
        print(f"admissibility {status}", file=out)
        if not admissible.passed:
            print(_admissibility_summary(admissible), file=out)
        return EXIT_OK
    writer = io.OutputWriter(cfg.output_dir, cfg.formats)
    writer.json("admissibility.json", admissible.as_dict())
    if not admissible.passed:
        print(_admissibility_summary(admissible), file=sys.stderr)
        return EXIT_ADMISSIBILITY
    solver_pass(cfg, writer)

    log = ReportLog()
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        futures = [(plan, pool.submit(_run_check, plan, problem)) for plan in cfg.checks]
        for plan, fut in futures:
            report = fut.result()
            log.append(report)
            writer.report(report)
            if plan.name == "energy_identity" and report.details.get("fd_table"):
                writer.csv("distance.csv", io.write_distance_csv, report.details["fd_table"])
    reports = list(log)
    text = summary_text(reports)
    writer.text("summary.txt", text)
    writer.csv("summary.csv", io.write_csv,
               {"check": "check name", "verdict": "pass or fail", "residual": "normalized residual",
                "tol": "tolerance", "runtime_seconds": "wall clock seconds"},
               [(r.name, r.verdict, r.residual, r.tolerance, r.runtime_seconds) for r in reports])
    print(text, end="", file=out)
    return EXIT_OK if log.all_passed else EXIT_CHECK_FAILED


def list_models(registry: Registry, out=None) -> int:
    out = out or sys.stdout
    for kind, name, params in registry.listing():
        print(f"{kind:<11} {name:<14} {', '.join(params)}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wflow", description="Entropy dissipation and Wasserstein flow checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    p_run.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    p_run.add_argument("--seed", type=int, help="override [solver] seed")
    p_run.add_argument("--out", help="override [output] directory")
    p_run.add_argument("--check", action="append", choices=sorted(CHECKS), help="run only this check")
    p_list = sub.add_parser("list-models", help="list registered potentials and volatilities")
    p_list.add_argument("--empty-registry", action="store_true", help="list an empty registry")
    p_check = sub.add_parser("check", help="run a single check and print its JSON report")
    p_check.add_argument("name", choices=sorted(CHECKS))
    p_check.add_argument("config")
    p_check.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-models":
        return list_models(Registry() if args.empty_registry else default_registry())
    try:
        if args.command == "run":
            cfg = load_config(args.config, seed=args.seed, out=args.out, only=args.check)
            worker_count()
            return execute(cfg, dry_run=args.dry_run)
        cfg = load_config(args.config, seed=args.seed, only=[args.name])
        admissible = check_admissibility(cfg.problem)
        if not admissible.passed:
            print(_admissibility_summary(admissible), file=sys.stderr)
            return EXIT_ADMISSIBILITY
        report = _run_check(cfg.checks[0], cfg.problem)
        print(report.to_json())
        return EXIT_OK if report.passed else EXIT_CHECK_FAILED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures keep the module of origin
        tb = traceback.extract_tb(exc.__traceback__)
        origin = next((Path(f.filename).stem for f in reversed(tb) if "wflow" in f.filename), "wflow")
        print(f"runtime error in wflow.{origin}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
