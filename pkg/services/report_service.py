"""
Report Service
Stores coverage reports in the database and reads them back
"""

from typing import List

from loguru import logger
from sqlalchemy.orm import Session

from database.models import CoverageCellRecord, CoverageRun
from models.moments import MomentSet
from services.correction_service import TFactors
from services.coverage_service import CoverageCell, CoverageReport, ScenarioConfig, TruthEstimate


class ReportService:
    """Service class for persisted coverage runs"""

    def __init__(self):
        logger.info("ReportService initialized")

    def save_report(self, db: Session, report: CoverageReport) -> int:
        """
        Persist a coverage report

        Args:
            db: Database session
            report: Completed coverage report

        Returns:
            Id of the stored run
        """
        try:
            scenario = report.scenario
            run = CoverageRun(
                scenario_name=scenario.name,
                model=scenario.model,
                divergence=scenario.divergence,
                data_law=scenario.data_law,
                n=scenario.n,
                reps=scenario.reps,
                base_seed=str(scenario.base_seed),
                scenario=scenario.model_dump(mode="json"),
                truth=report.truth.model_dump(mode="json"),
                oracle_moments=report.oracle_moments.model_dump(mode="json") if report.oracle_moments else None,
                oracle_factor=report.oracle_factor.model_dump(mode="json") if report.oracle_factor else None,
                failure_rate=report.failure_rate,
                flagged=report.flagged,
            )
            for position, cell in enumerate(report.cells):
                run.cells.append(CoverageCellRecord(position=position, **cell.model_dump()))

            db.add(run)
            db.commit()
            db.refresh(run)
            logger.success(f"Stored coverage run {run.id} ({scenario.name})")
            return run.id

        except Exception as e:
            logger.error(f"Error storing coverage report: {e}")
            db.rollback()
            raise

    def get_report(self, db: Session, run_id: int) -> CoverageReport:
        """Rebuild a stored report; KeyError for an unknown id"""
        run = db.query(CoverageRun).filter(CoverageRun.id == run_id).first()
        if run is None:
            raise KeyError(f"no stored run with id {run_id}")

        return CoverageReport(
            scenario=ScenarioConfig.model_validate(run.scenario),
            truth=TruthEstimate.model_validate(run.truth),
            cells=[
                CoverageCell(
                    method=record.method,
                    level=record.level,
                    coverage=record.coverage,
                    half_width=record.half_width,
                    failures=record.failures,
                    mean_width=record.mean_width,
                    reps_completed=record.reps_completed,
                )
                for record in run.cells
            ],
            failure_rate=run.failure_rate,
            flagged=run.flagged,
            oracle_moments=MomentSet.model_validate(run.oracle_moments) if run.oracle_moments else None,
            oracle_factor=TFactors.model_validate(run.oracle_factor) if run.oracle_factor else None,
        )

    def list_runs(self, db: Session) -> List[CoverageRun]:
        """All stored runs, newest first"""
        return db.query(CoverageRun).order_by(CoverageRun.id.desc()).all()


report_service = ReportService()
