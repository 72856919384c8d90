"""
Database Models
SQLAlchemy ORM tables for stored coverage runs
"""

from datetime import datetime

from sqlalchemy import JSON, Boolean, Column, DateTime, Float, ForeignKey, Integer, String
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class CoverageRun(Base):
    """One coverage experiment: scenario, truth and oracle summaries"""
    __tablename__ = "coverage_runs"

    id = Column(Integer, primary_key=True, index=True)
    scenario_name = Column(String(100), nullable=False, index=True)
    model = Column(String(100), nullable=False)
    divergence = Column(String(50), nullable=False)
    data_law = Column(String(50), nullable=False)
    n = Column(Integer, nullable=False)
    reps = Column(Integer, nullable=False)
    base_seed = Column(String(20), nullable=False)  # up to 2**64 - 1
    scenario = Column(JSON, nullable=False)  # full ScenarioConfig dump
    truth = Column(JSON, nullable=False)
    oracle_moments = Column(JSON)
    oracle_factor = Column(JSON)
    failure_rate = Column(Float, default=0.0)
    flagged = Column(Boolean, default=False)
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationships
    cells = relationship(
        "CoverageCellRecord",
        back_populates="run",
        cascade="all, delete-orphan",
        order_by="CoverageCellRecord.position",
    )

    def __repr__(self):
        return f"<CoverageRun {self.id}: {self.scenario_name} n={self.n}>"


class CoverageCellRecord(Base):
    """Coverage of one (method, level) pair within a run"""
    __tablename__ = "coverage_cells"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("coverage_runs.id"), nullable=False, index=True)
    position = Column(Integer, nullable=False)
    method = Column(String(10), nullable=False)  # el, eb, tb, tb2
    level = Column(Float, nullable=False)
    coverage = Column(Float, nullable=False)
    half_width = Column(Float, nullable=False)
    failures = Column(Integer, default=0)
    mean_width = Column(Float)
    reps_completed = Column(Integer, nullable=False)

    run = relationship("CoverageRun", back_populates="cells")

    def __repr__(self):
        return f"<CoverageCell {self.method}@{self.level}: {self.coverage:.4f}>"
