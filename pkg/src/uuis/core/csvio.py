"""CSV intake hygiene shared by the bulk importer and the user importer.

Files must be plain ASCII; fields are screened against control characters,
spreadsheet formula injection (leading ``=``, ``+``, ``-`` or ``@``) and a
1024-character cap.  Errors always carry the exact data row (1-based,
header excluded) and column name.
"""

from __future__ import annotations

import csv
import io

from .errors import ValidationError

MAX_FIELD_LEN = 1024
_FORBIDDEN_LEADERS = ("=", "+", "-", "@")


class RowError(Exception):
    """One bad cell; row is 1-based over data rows, header excluded."""

    def __init__(self, row: int, column: str, message: str):
        super().__init__(f"row {row}, column {column}: {message}")
        self.row = row
        self.column = column
        self.message = message


def decode_ascii(data: bytes) -> str:
    for offset, byte in enumerate(data):
        if byte >= 0x80:
            raise ValidationError("non-ascii", f"byte offset {offset}")
    return data.decode("ascii")


def parse_rows(text: str, header: list[str]) -> list[dict]:
    """Parse RFC-4180 CSV; the header row must match ``header`` exactly."""
    reader = csv.reader(io.StringIO(text))
    try:
        actual = next(reader)
    except StopIteration:
        raise ValidationError("schema-mismatch", "missing header row") from None
    if actual != header:
        raise ValidationError("schema-mismatch", ",".join(actual))
    rows = []
    for index, fields in enumerate(reader, start=1):
        if not fields:
            continue
        if len(fields) != len(header):
            raise RowError(index, header[min(len(fields), len(header)) - 1],
                           f"expected {len(header)} fields, got {len(fields)}")
        record = dict(zip(header, fields))
        for column, value in record.items():
            problem = field_problem(value)
            if problem:
                raise RowError(index, column, problem)
        rows.append(record)
    return rows


def field_problem(value: str) -> str | None:
    if len(value) > MAX_FIELD_LEN:
        return f"field exceeds {MAX_FIELD_LEN} characters"
    if any(ord(c) < 0x20 or ord(c) == 0x7F for c in value):
        return "control character in field"
    if value[:1] in _FORBIDDEN_LEADERS:
        return f"field must not start with '{value[0]}'"
    return None
