"""Delimited label-table reading and staging.

The interchange format is one header row plus data rows, fields separated by
a configurable delimiter (tab by default). Fields are trimmed of surrounding
whitespace on the way in; an empty id field is a parse error, an empty label
value means "no value for this user".
"""

from __future__ import annotations

import io
import os
from collections.abc import Iterable, Iterator
from pathlib import Path

from .errors import ParseError

DEFAULT_DELIMITER = "\t"


def read_delimited(
    path: Path, delimiter: str = DEFAULT_DELIMITER
) -> tuple[list[str], Iterator[list[str]]]:
    """Header columns plus a row iterator; rows are validated lazily.

    Raises ParseError (with the line number) for a missing header or any row
    whose field count differs from the header's.
    """
    fh = open(path, "r", encoding="utf-8", newline="")
    header_line = fh.readline()
    if not header_line:
        fh.close()
        raise ParseError("empty file, expected a header row", line=1)
    columns = [c.strip() for c in header_line.rstrip("\r\n").split(delimiter)]
    if any(not c for c in columns):
        fh.close()
        raise ParseError("blank column name in header", line=1)

    def rows() -> Iterator[list[str]]:
        with fh:
            for lineno, line in enumerate(fh, start=2):
                stripped = line.rstrip("\r\n")
                if not stripped:
                    continue
                fields = [f.strip() for f in stripped.split(delimiter)]
                if len(fields) != len(columns):
                    raise ParseError(
                        f"expected {len(columns)} fields, found {len(fields)}", line=lineno
                    )
                yield fields

    return columns, rows()


def write_delimited(
    path: Path,
    columns: list[str],
    rows: Iterable[Iterable[str]],
    delimiter: str = DEFAULT_DELIMITER,
) -> int:
    """Write a delimited table; returns the data row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    count = 0
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(delimiter.join(columns) + "\n")
        for row in rows:
            fh.write(delimiter.join(row) + "\n")
            count += 1
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return count


def render_delimited(columns: list[str], rows: Iterable[Iterable[str]], delimiter: str = DEFAULT_DELIMITER) -> str:
    buf = io.StringIO()
    buf.write(delimiter.join(columns) + "\n")
    for row in rows:
        buf.write(delimiter.join(row) + "\n")
    return buf.getvalue()
