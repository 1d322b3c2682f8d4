"""CSV and JSON input/output for datasets and experiment results."""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .. import __version__


def _require(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    return path


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_data_csv(path) -> np.ndarray:
    """One row per unit, one column per outcome; an optional header row is skipped."""
    path = _require(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise ValueError(f"{path}: rows have differing lengths {sorted(width)}")
    try:
        return np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from exc


def read_covariates_csv(path) -> np.ndarray:
    """Long-format covariates with columns ``i, j, x0, x1, ...`` into an ``(n, q, r)`` array.

    Indices are zero-based; every ``(i, j)`` cell must appear exactly once.
    """
    path = _require(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"i", "j"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain 'i' and 'j' columns")
        xcols = [c for c in reader.fieldnames if c not in ("i", "j")]
        if not xcols:
            raise ValueError(f"{path}: no covariate columns")
        records = [(int(r["i"]), int(r["j"]), [float(r[c]) for c in xcols]) for r in reader]
    n = 1 + max(r[0] for r in records)
    q = 1 + max(r[1] for r in records)
    out = np.full((n, q, len(xcols)), np.nan)
    seen = np.zeros((n, q), dtype=bool)
    for i, j, x in records:
        if seen[i, j]:
            raise ValueError(f"{path}: duplicate row for (i={i}, j={j})")
        seen[i, j] = True
        out[i, j] = x
    if not seen.all():
        raise ValueError(f"{path}: missing (i, j) rows")
    return out


def write_covariates_csv(path, covariates):
    covariates = np.asarray(covariates)
    n, q, r = covariates.shape
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j"] + [f"x{k}" for k in range(r)])
        for i in range(n):
            for j in range(q):
                w.writerow([i, j] + [repr(float(v)) for v in covariates[i, j]])


def write_data_csv(path, data):
    data = np.asarray(data)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{j}" for j in range(data.shape[1])])
        for row in data:
            w.writerow([repr(float(v)) if data.dtype.kind == "f" else int(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def run_metadata() -> dict:
    import scipy

    return {"complik": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": sys.version.split()[0]}


def write_json(path, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n")
    return path


def dumps_json(payload: dict) -> str:
    return json.dumps(_jsonable(payload), indent=2)


def coverage_table(report) -> list[list]:
    """Rows ``[row, method, level, stat1, stat2, ...]`` with coverages to one decimal."""
    stats, seen = [], set()
    for key in report.cells:
        if key[1] not in seen:
            seen.add(key[1])
            stats.append(key[1])
    groups = sorted({(k[0], k[2], k[3]) for k in report.cells}, key=lambda g: (g[0], str(g[1]), g[2]))
    header = [report.row_label, "method", "level"] + stats + ["R_eff"]
    rows = [header]
    for row, method, level in groups:
        line = [row, method, f"{level:g}"]
        r_eff = ""
        for s in stats:
            cell = report.cells.get((row, s, method, level))
            line.append("" if cell is None else f"{cell['coverage']:.1f}")
            if cell is not None:
                r_eff = cell["R_eff"]
        rows.append(line + [r_eff])
    return rows


def write_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


def timing_table(result: dict) -> list[list]:
    header = ["side", "q", "pairs", "analytic_s", "mc_s", "analytic_ratio", "mc_ratio", "rel_frobenius"]
    rows = [header]
    for r in result["rows"]:
        rows.append([r["side"], r["q"], r["pairs"], f"{r['analytic_s']:.4g}", f"{r['mc_s']:.4g}",
                     f"{r['analytic_ratio']:.2f}" if "analytic_ratio" in r else "",
                     f"{r['mc_ratio']:.2f}" if "mc_ratio" in r else "",
                     f"{r['rel_frobenius']:.4f}"])
    return rows
