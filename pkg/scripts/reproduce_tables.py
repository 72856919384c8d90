"""
Coverage Table Reproduction
Runs every shipped scenario and prints one coverage table per experiment
"""

import argparse
import sys
from pathlib import Path

sys.path.append(str(Path(__file__).resolve().parent.parent))

from loguru import logger

from cli.io import format_float
from config.settings import settings
from database.database import get_db, init_database
from services.coverage_service import ScenarioConfig, load_scenario, run_coverage
from services.report_service import report_service
from utils.log_config import configure_logging


def format_table(report) -> str:
    """Rows per method, one column per nominal level, coverage ± half width in percent"""
    levels = report.scenario.nominal_levels
    header = f"{'method':<8}" + "".join(f"{level:>18.0%}" for level in levels)
    lines = [f"{report.scenario.name} (truth {format_float(report.truth.value)})", header]
    for method in report.scenario.methods:
        row = f"{method.upper():<8}"
        for level in levels:
            cell = report.cell(method, level)
            row += f"{100 * cell.coverage:>10.2f} ± {100 * cell.half_width:<5.2f}"
        lines.append(row)
    if report.flagged:
        lines.append(f"  flagged: failure rate {report.failure_rate:.4%}")
    return "\n".join(lines)


def main():
    parser = argparse.ArgumentParser(description="Reproduce the coverage tables")
    parser.add_argument("--scenarios", default=str(settings.SCENARIO_DIR), help="directory of JSON scenarios")
    parser.add_argument("--pattern", default="*.json")
    parser.add_argument("--reps", type=int, help="override the replication count")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--store", action="store_true")
    args = parser.parse_args()

    configure_logging(settings.LOG_LEVEL, settings.LOG_FILE)
    paths = sorted(Path(args.scenarios).glob(args.pattern))
    if not paths:
        logger.error(f"No scenarios matching {args.pattern} in {args.scenarios}")
        sys.exit(2)

    if args.store:
        init_database()

    for path in paths:
        config = load_scenario(path)
        if args.reps:
            config = ScenarioConfig.model_validate({**config.model_dump(), "reps": args.reps})
        report = run_coverage(config, workers=args.workers)
        print(format_table(report), end="\n\n", flush=True)

        if args.store:
            with get_db() as db:
                report_service.save_report(db, report)

    logger.success(f"Reproduced {len(paths)} scenario(s)")


if __name__ == "__main__":
    main()
