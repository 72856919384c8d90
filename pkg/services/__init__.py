"""Services module initialization"""

from .dro_service import DroSolver, solve_dro_exact, el_profile
from .correction_service import BallSizeRule, CIResult, confidence_interval, corrected_q, select_q
from .coverage_service import CoverageService, ScenarioConfig, CoverageReport, run_coverage
from .report_service import ReportService

__all__ = [
    "DroSolver",
    "solve_dro_exact",
    "el_profile",
    "BallSizeRule",
    "CIResult",
    "confidence_interval",
    "corrected_q",
    "select_q",
    "CoverageService",
    "ScenarioConfig",
    "CoverageReport",
    "run_coverage",
    "ReportService",
]
