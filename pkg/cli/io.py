"""
CSV and JSON I/O
Sample ingestion and report emission for the command line
"""

import csv
import io
import json
import re
from pathlib import Path
from typing import Any, List, Union

import numpy as np
from pydantic import BaseModel

from models.influence import Sample
from services.coverage_service import CoverageReport
from utils.errors import EmptyData, ParseError

# plain decimal or exponent notation; no locale separators, no inf/nan, no underscores
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")

REPORT_COLUMNS = ("method", "level", "coverage", "half_width", "mean_width", "failures")


def parse_csv(path: Union[str, Path]) -> Sample:
    """
    Read a numeric CSV file with a header row

    Args:
        path: File path; UTF-8 (a BOM is tolerated), LF or CRLF line endings

    Returns:
        Sample with one column per header field

    Raises:
        ParseError: at the 1-based (data row, column) of the first bad cell
        EmptyData: if the file has no header or no data rows
    """
    text = Path(path).read_bytes().decode("utf-8-sig")
    rows = [row for row in csv.reader(io.StringIO(text, newline="")) if row]
    if not rows:
        raise EmptyData(f"{path}: no header row")

    width = len(rows[0])
    data: List[List[float]] = []
    for row_number, row in enumerate(rows[1:], start=1):
        if len(row) < width:
            raise ParseError(row_number, len(row) + 1, "missing value")
        if len(row) > width:
            raise ParseError(row_number, width + 1, "more values than header fields")
        values = []
        for column_number, cell in enumerate(row, start=1):
            cell = cell.strip()
            if not _NUMBER.fullmatch(cell):
                raise ParseError(row_number, column_number, f"not a number: {cell!r}")
            values.append(float(cell))
        data.append(values)

    if not data:
        raise EmptyData(f"{path}: header only")
    return Sample(np.array(data, dtype=float))


def format_float(value: float) -> str:
    """17 significant digits; parses back to the same double"""
    return format(float(value), ".17g")


def to_json(payload: Union[BaseModel, dict]) -> str:
    """
    Canonical JSON output

    Python's float repr is the shortest string that round-trips, so no digits are lost.
    """
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(_plain(payload), indent=2)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def report_from_json(text: str) -> CoverageReport:
    return CoverageReport.model_validate_json(text)


def report_to_csv(report: CoverageReport) -> str:
    """Coverage table: method, level, coverage, half_width, mean_width, failures"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for cell in report.cells:
        writer.writerow(
            [
                cell.method,
                format_float(cell.level),
                format_float(cell.coverage),
                format_float(cell.half_width),
                "" if cell.mean_width is None else format_float(cell.mean_width),
                cell.failures,
            ]
        )
    return buffer.getvalue()
