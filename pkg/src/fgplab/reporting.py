"""Deterministic JSON and CSV emission.

Floats are always written with 17 significant digits and dictionary keys are
sorted, so identical inputs give byte-identical files.
"""

import csv
import json
import math

import numpy as np

SCHEMA_VERSION = "1.0"


def _float(x):
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def _encode(obj, level, indent):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(obj[k], level + 1, indent)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number, bool)) or v is None for v in obj):
            return "[" + ", ".join(_encode(v, level + 1, indent) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, level + 1, indent) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if hasattr(obj, "to_dict"):
        return _encode(obj.to_dict(), level, indent)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=2):
    return _encode(obj, 0, indent) + "\n"


def dump_json(obj, path, indent=2):
    with open(path, "w") as fh:
        fh.write(dumps(obj, indent))


def write_csv(path, header, rows):
    """Write rows of numbers (17 significant digits) and strings."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([format(float(v), ".17g") if isinstance(v, (float, np.floating)) else v for v in row])


def write_columns(path, columns):
    """Write a dict of equal-length 1-D arrays as CSV columns (in the given order)."""
    names = list(columns)
    cols = [np.asarray(columns[k]).reshape(-1) for k in names]
    write_csv(path, names, zip(*cols))
