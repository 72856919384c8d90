"""
Database Initialization Script
Creates the coverage result tables
"""

import argparse
import sys
from pathlib import Path

sys.path.append(str(Path(__file__).resolve().parent.parent))

from loguru import logger

from config.settings import settings
from database.database import init_database, reset_database


def main():
    """Main initialization function"""
    parser = argparse.ArgumentParser(description="Create or reset the coverage result tables")
    parser.add_argument("--reset", action="store_true", help="drop stored runs and recreate the tables")
    args = parser.parse_args()

    logger.info("=" * 60)
    logger.info("DRO CONFIDENCE INTERVALS - DATABASE INITIALIZATION")
    logger.info("=" * 60)

    try:
        if args.reset:
            reset_database()
        else:
            init_database()
        logger.success("DATABASE INITIALIZATION COMPLETE!")
        logger.info(f"Database: {settings.DATABASE_URL}")
        logger.info("Store a run with: python main.py coverage --config <file> --store")
    except Exception as e:
        logger.error(f"Initialization failed: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
