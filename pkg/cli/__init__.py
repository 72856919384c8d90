"""Command line module initialization"""

from .commands import build_parser, main
from .io import parse_csv, report_to_csv, to_json

__all__ = ["build_parser", "main", "parse_csv", "report_to_csv", "to_json"]
