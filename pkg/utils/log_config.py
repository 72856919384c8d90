"""
Logging Setup
Installs loguru sinks for the command line and the worker pool
"""

import sys
from pathlib import Path
from typing import Optional

from loguru import logger


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """
    Replace loguru's default sink with the application sinks

    Args:
        level: Minimum level for the terminal sink
        log_file: Optional path of a rotating file sink (always DEBUG)
    """
    logger.remove()
    logger.add(
        sys.stderr,
        level=level,
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {name}:{function} - {message}",
    )
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        logger.add(log_file, level="DEBUG", rotation="10 MB", retention=5, enqueue=True)


def configure_worker_logging(level: str = "WARNING") -> None:
    """Quiet sink for pool workers"""
    logger.remove()
    logger.add(sys.stderr, level=level)
