"""
Command Line Interface
Subcommands ci, solve, coverage, check-divergence and runs
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from loguru import logger
from pydantic import ValidationError

from cli.io import parse_csv, report_to_csv, to_json
from config.settings import settings
from database.database import get_db, init_database
from models.divergence import is_bartlett_correctable, make_divergence, parse_divergence
from models.moments import estimate_moments
from models.registry import SMOOTH_FUNCTIONS, build_model, parse_model_spec
from services.correction_service import (
    METHOD_ALIASES,
    BallSizeRule,
    confidence_interval,
    standardize_smooth,
    t_factors,
)
from services.coverage_service import ScenarioConfig, load_scenario, run_coverage
from services.dro_service import solve_dro_exact
from services.report_service import report_service
from utils.errors import ComputationError, ConfigError, InputError
from utils.log_config import configure_logging

EXIT_OK, EXIT_COMPUTATION, EXIT_USAGE = 0, 1, 2


# ==================== HANDLERS ====================

def _ball_rule(args: argparse.Namespace, divergence_text: str) -> BallSizeRule:
    kind = METHOD_ALIASES[args.method]
    if kind in ("exact", "bartlett-estimated"):
        return BallSizeRule(kind=kind, nominal=args.level)

    if not args.oracle_data:
        raise ConfigError(f"--method {args.method} needs --oracle-data")
    oracle = parse_csv(args.oracle_data)

    if kind == "bartlett-theoretical":
        moments = estimate_moments(build_model(args.model, oracle), oracle)
        return BallSizeRule(kind=kind, nominal=args.level, oracle_moments=moments)

    model_kind, name = parse_model_spec(args.model)
    if model_kind != "smooth" or parse_divergence(divergence_text).name != "reverse-kl":
        raise ConfigError("tb2 needs a smooth model and the reverse-kl divergence")
    std = standardize_smooth(oracle, SMOOTH_FUNCTIONS[name])
    factor = t_factors(std.gradient, std.hessian, std.alpha3, std.alpha4, prior_sign=True)
    return BallSizeRule(kind=kind, nominal=args.level, oracle_factor=factor)


def cmd_ci(args: argparse.Namespace) -> int:
    sample = parse_csv(args.data)
    spec = parse_divergence(args.divergence)
    model = build_model(args.model, sample)
    try:
        rule = _ball_rule(args, args.divergence)
    except ValidationError as e:
        raise ConfigError(str(e))
    result = confidence_interval(model, sample, spec, rule, solver=args.solver)
    print(to_json(result))
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    sample = parse_csv(args.data)
    spec = parse_divergence(args.divergence)
    model = build_model(args.model, sample)
    if not args.q > 0:
        raise ConfigError("--q must be positive")
    solution = solve_dro_exact(model, sample, spec, args.q, args.direction)
    print(to_json(solution.summary()))
    return EXIT_OK


def cmd_coverage(args: argparse.Namespace) -> int:
    config = load_scenario(args.config)
    overrides = {}
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if overrides:
        try:
            config = ScenarioConfig.model_validate({**config.model_dump(), **overrides})
        except ValidationError as e:
            raise ConfigError(str(e))

    report = run_coverage(config, workers=args.workers)
    text = to_json(report) if args.out == "json" else report_to_csv(report)
    if args.output:
        Path(args.output).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
        logger.info(f"Report written to {args.output}")
    else:
        print(text, end="" if text.endswith("\n") else "\n")

    if args.store:
        init_database()
        with get_db() as db:
            run_id = report_service.save_report(db, report)
        logger.info(f"Stored as run {run_id}")
    return EXIT_OK


def cmd_runs(args: argparse.Namespace) -> int:
    init_database()
    with get_db() as db:
        if args.id is not None:
            try:
                report = report_service.get_report(db, args.id)
            except KeyError as e:
                raise ConfigError(str(e.args[0]))
            print(to_json(report))
            return EXIT_OK

        listing = [
            {
                "id": run.id,
                "scenario": run.scenario_name,
                "model": run.model,
                "divergence": run.divergence,
                "n": run.n,
                "reps": run.reps,
                "flagged": run.flagged,
                "created_at": run.created_at.isoformat() if run.created_at else None,
            }
            for run in report_service.list_runs(db)
        ]
        print(json.dumps(listing, indent=2))
        return EXIT_OK


def cmd_check_divergence(args: argparse.Namespace) -> int:
    if args.lam is not None:
        spec = make_divergence(args.name, args.lam)
    else:
        spec = parse_divergence(args.name)
    verdict = {
        "d2": spec.d2_at_1,
        "d3": spec.d3_at_1,
        "d4": spec.d4_at_1,
        "bartlett_correctable": is_bartlett_correctable(spec),
    }
    print(json.dumps(verdict))
    return EXIT_OK


# ==================== PARSER ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dro-ci",
        description="Bartlett-corrected DRO confidence intervals over φ-divergence balls",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="log at DEBUG level")
    parser.add_argument("--log-file", default=settings.LOG_FILE, help="rotating log file (DEBUG)")
    sub = parser.add_subparsers(dest="command", required=True)

    divergence_help = "kl | reverse-kl | chi2 | cressie-read:<λ>"

    ci = sub.add_parser("ci", help="confidence interval for one sample")
    ci.add_argument("--data", required=True, help="CSV file with a header row")
    ci.add_argument("--model", required=True, help="smooth:<name> | vstat:<name> | optim:<name>")
    ci.add_argument("--divergence", required=True, help=divergence_help)
    ci.add_argument("--level", required=True, type=float, help="nominal coverage in (0, 1)")
    ci.add_argument("--method", required=True, choices=sorted(METHOD_ALIASES))
    ci.add_argument("--oracle-data", help="large CSV sample for the tb and tb2 methods")
    ci.add_argument("--solver", choices=["exact", "expansion"], default="exact")
    ci.set_defaults(handler=cmd_ci)

    solve = sub.add_parser("solve", help="one direction of the DRO problem at a fixed ball size")
    solve.add_argument("--data", required=True)
    solve.add_argument("--model", required=True)
    solve.add_argument("--divergence", required=True, help=divergence_help)
    solve.add_argument("--q", required=True, type=float, help="ball size; constraint Ê φ(L) <= q/(2n)")
    solve.add_argument("--direction", required=True, choices=["max", "min"])
    solve.set_defaults(handler=cmd_solve)

    coverage = sub.add_parser("coverage", help="Monte Carlo coverage experiment")
    coverage.add_argument("--config", required=True, help="JSON scenario file")
    coverage.add_argument("--reps", type=int)
    coverage.add_argument("--seed", type=int)
    coverage.add_argument("--out", choices=["json", "csv"], default="json")
    coverage.add_argument("--output", help="write the report here instead of stdout")
    coverage.add_argument("--workers", type=int, help="worker processes (capped by DRO_CI_THREADS)")
    coverage.add_argument("--store", action="store_true", help="save the report in the results database")
    coverage.set_defaults(handler=cmd_coverage)

    check = sub.add_parser("check-divergence", help="derivatives at 1 and Bartlett correctability")
    check.add_argument("name", help=divergence_help)
    check.add_argument("--lambda", dest="lam", type=float, help="Cressie-Read parameter")
    check.set_defaults(handler=cmd_check_divergence)

    runs = sub.add_parser("runs", help="list stored coverage runs")
    runs.add_argument("--id", type=int, help="print one stored report as JSON")
    runs.set_defaults(handler=cmd_runs)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand

    Returns:
        0 on success, 2 for usage and input errors, 1 for computation errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE

    configure_logging("DEBUG" if args.verbose else settings.LOG_LEVEL, args.log_file)

    try:
        return args.handler(args)
    except InputError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ComputationError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_COMPUTATION
