"""
Database Connection and Session Management
"""

from contextlib import contextmanager
from typing import Iterator, Optional

from loguru import logger
from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker
from sqlalchemy.pool import StaticPool

from config.settings import settings
from database.models import Base


def make_engine(url: str) -> Engine:
    """Engine for a database URL (SQLite gets a static pool)"""
    if url.startswith("sqlite"):
        return create_engine(
            url,
            connect_args={"check_same_thread": False},
            poolclass=StaticPool,
            echo=settings.DEBUG,
        )
    return create_engine(url, pool_pre_ping=True, echo=settings.DEBUG)


engine = make_engine(settings.DATABASE_URL)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def init_database(bind: Optional[Engine] = None):
    """Create the coverage tables"""
    try:
        Base.metadata.create_all(bind=bind or engine)
        logger.success("Database tables created successfully")
    except Exception as e:
        logger.error(f"Error creating database tables: {e}")
        raise


@contextmanager
def get_db() -> Iterator[Session]:
    """
    Session scope; closes the session when the block exits

    Usage: with get_db() as db: ...
    """
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def reset_database(bind: Optional[Engine] = None):
    """Drop all tables and recreate them (stored runs are lost)"""
    logger.warning("Resetting database - dropping all tables")
    target = bind or engine
    Base.metadata.drop_all(bind=target)
    Base.metadata.create_all(bind=target)
    logger.success("Database reset complete")
