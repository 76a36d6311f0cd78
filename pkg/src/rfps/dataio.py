"""CSV/JSON input and output.

The CSV dialect is fixed: comma separators, '.' decimal point, required
header row, UTF-8.  Floats are written with ``repr`` so files round-trip
bit-exactly through :func:`read_table`.
"""

import csv
import json

import numpy as np


def read_matrix_csv(path):
    """Read a strictly numeric CSV with a header row.

    Returns (column_names, data).  Raises ValueError naming the physical row
    (1-based, header included) and column of the first bad cell.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required")
        header = [h.strip() for h in header]
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or (len(rec) == 1 and rec[0].strip() == ""):
                continue
            if len(rec) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(rec)} cells, "
                                 f"expected {len(header)}")
            vals = []
            for name, cell in zip(header, rec):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: non-numeric cell in row {lineno}, "
                                     f"column '{name}'") from None
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def _format_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def read_table(path):
    """Read a CSV of mixed numeric/string cells (our own outputs)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for rec in reader:
            vals = []
            for cell in rec:
                try:
                    vals.append(float(cell))
                except ValueError:
                    vals.append(cell)
            rows.append(vals)
    return header, rows


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_config(path):
    """Flat key=value config; '#' starts a comment, blank lines ignored."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected key=value")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out
