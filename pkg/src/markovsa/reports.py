"""CSV and JSON emission: header row always, RFC-4180 quoting, stable key order."""

import csv
import dataclasses
import json
import math
import os

import numpy as np


def jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if callable(obj):
        return getattr(obj, "__name__", "callable")
    return obj


def dumps(obj):
    return json.dumps(jsonable(obj), sort_keys=True, indent=2)


def write_json(obj, path):
    with open(path, "w") as fh:
        fh.write(dumps(obj) + "\n")


def cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_rows(header, rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([cell(v) for v in r])


def write_table(table, path, fmt):
    """``table`` is a dict of equal-length columns; written as CSV or as a JSON list of records."""
    cols = list(table)
    n = len(table[cols[0]]) if cols else 0
    if fmt == "json":
        write_json([{c: table[c][i] for c in cols} for i in range(n)], path)
    else:
        write_rows(cols, ([table[c][i] for c in cols] for i in range(n)), path)


def write_mapping(mapping, path, fmt):
    """A flat key/value report; CSV gets 'key,value' rows in sorted order."""
    if fmt == "json":
        write_json(mapping, path)
        return
    flat = {}

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj):
                walk(f"{prefix}{k}.", obj[k])
        else:
            flat[prefix[:-1]] = obj

    walk("", jsonable(mapping))
    write_rows(["key", "value"], ([k, v] for k, v in flat.items()), path)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
