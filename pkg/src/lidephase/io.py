"""CSV and text output helpers.

Dialect used everywhere: comma separator, '.' decimal point, one mandatory
header row, '#' comment lines allowed.  Column names carry explicit SI
units (current_A, z_m, ...).  Files are written atomically (temp file in
the target directory, then rename) so partially written outputs never
appear under the final name.
"""

import csv
import io as _io
import os
import tempfile

import numpy as np

from .errors import CsvFormatError

__all__ = ["write_text_atomic", "write_csv", "read_csv_table"]


def write_text_atomic(path, text):
    """Write a text file via temp + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp_", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def write_csv(path, header, rows, comments=()):
    """Write rows (iterable of sequences) under a header row, atomically."""
    buf = _io.StringIO()
    for comment in comments:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    write_text_atomic(path, buf.getvalue())


def read_csv_table(path, numeric, text=(), optional_numeric=()):
    """Read named columns from a CSV file.

    numeric / optional_numeric columns are converted to float arrays, text
    columns are kept as lists of strings.  Raises CsvFormatError naming the
    offending line for structural or conversion problems, FileNotFoundError
    if the file is absent.  Optional columns missing from the header are
    returned as None.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = [
            (n, ln)
            for n, ln in enumerate(fh, start=1)
            if ln.strip() and not ln.lstrip().startswith("#")
        ]
    if not lines:
        raise CsvFormatError(f"{path}: no header row found")
    header_no, header_line = lines[0]
    header = [h.strip() for h in next(csv.reader([header_line]))]
    required = list(numeric) + list(text)
    missing = [c for c in required if c not in header]
    if missing:
        raise CsvFormatError(f"{path}:{header_no}: header lacks required column(s) {missing}")
    present_optional = [c for c in optional_numeric if c in header]
    columns = {c: [] for c in required + present_optional}
    index = {c: header.index(c) for c in columns}
    float_cols = set(numeric) | set(present_optional)
    for lineno, line in lines[1:]:
        row = next(csv.reader([line]))
        if len(row) != len(header):
            raise CsvFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        for col, idx in index.items():
            raw = row[idx].strip()
            if col in float_cols:
                try:
                    columns[col].append(float(raw))
                except ValueError:
                    raise CsvFormatError(
                        f"{path}:{lineno}: column {col!r} is not a number: {raw!r}"
                    ) from None
            else:
                columns[col].append(raw)
    for col in float_cols:
        columns[col] = np.asarray(columns[col], dtype=float)
    for col in optional_numeric:
        columns.setdefault(col, None)
    return columns
