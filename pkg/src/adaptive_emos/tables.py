"""CSV plumbing shared by readers and writers.

All files are UTF-8, comma-separated with '.' decimal point and a mandatory
header row. Lines starting with '#' are provenance comments and are skipped
on read; every writer emits one as its first line.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json

from .errors import ParseError

PROVENANCE_PREFIX = "# adaptive-emos"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def provenance_line(config: dict | None = None) -> str:
    from . import __version__

    tag = config_hash(config or {})
    return f"{PROVENANCE_PREFIX} v{__version__} config-hash={tag}"


def read_rows(path, expected_header: list[str]):
    """Yield (line_number, row) for each data row, validating the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = None
        for line_no, row in enumerate(reader, start=1):
            if not row or (row[0].startswith("#") and len(row) >= 1 and header is None):
                continue
            if header is None:
                header = [c.strip() for c in row]
                if header != expected_header:
                    raise ParseError(
                        path, line_no,
                        f"expected header {','.join(expected_header)!r}, got {','.join(header)!r}",
                    )
                continue
            if row and row[0].startswith("#"):
                continue
            if len(row) != len(expected_header):
                raise ParseError(
                    path, line_no, f"expected {len(expected_header)} fields, got {len(row)}"
                )
            yield line_no, [c.strip() for c in row]
    if header is None:
        raise ParseError(path, 1, "missing header row")


def parse_float(path, line_no, text, field):
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, line_no, f"{field} is not a number: {text!r}") from None


def parse_date(path, line_no, text):
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise ParseError(path, line_no, f"date is not ISO-8601: {text!r}") from None


def write_csv(path, header: list[str], rows, config: dict | None = None) -> None:
    """Write rows with a provenance comment line and the given header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(provenance_line(config) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def fmt(value) -> str:
    """Shortest round-trip decimal representation of a float."""
    return repr(float(value))
