"""Database module initialization"""

from .database import SessionLocal, engine, get_db, init_database, make_engine, reset_database
from .models import Base, CoverageCellRecord, CoverageRun

__all__ = [
    "get_db",
    "init_database",
    "reset_database",
    "make_engine",
    "engine",
    "SessionLocal",
    "Base",
    "CoverageRun",
    "CoverageCellRecord",
]
