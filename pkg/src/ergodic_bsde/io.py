"""CSV/JSON writers with reproducibility metadata.

CSV files start with ``# key=value`` metadata lines followed by a header row;
floats are written with 17 significant digits so doubles round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if x is None or isinstance(x, str):
        return x
    return str(x)


def base_meta(config_digest: str, seed, grid=None, scheme=None) -> dict:
    meta = {"config_digest": config_digest, "seed": seed, "version": __version__}
    if grid is not None:
        meta["grid"] = grid
    if scheme is not None:
        meta["scheme"] = scheme
    return meta


def write_csv(path, header, rows, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for key in sorted(meta):
            val = meta[key]
            text = json.dumps(_jsonable(val), sort_keys=True, separators=(",", ":")) if isinstance(val, dict) else fmt(val)
            fh.write(f"# {key}={text}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def read_csv(path):
    """(meta, header, rows as lists of str)."""
    meta, rows, header = {}, [], None
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("# "):
                key, _, val = line[2:].rstrip("\n").partition("=")
                meta[key] = val
            else:
                break
        fh.seek(0)
        body = [ln for ln in fh if not ln.startswith("# ")]
    r = csv.reader(body)
    header = next(r)
    rows = list(r)
    return meta, header, rows


def write_json(path, payload: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"meta": _jsonable(meta), **_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
