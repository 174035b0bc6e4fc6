"""CSV and JSON writers with deterministic formatting."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if np.isnan(f):
            return "nan"
        if np.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def trace_rows(states: np.ndarray, inputs: np.ndarray, traces: list) -> tuple[list, list]:
    """Long-format rows: iteration, node, state..., V, selected input..., set sizes."""
    nx, nu = states.shape[1], inputs.shape[2]
    header = ["iteration", "node"] + [f"x{d}" for d in range(nx)] + ["V"] + \
        [f"u{d}" for d in range(nu)] + ["size_H", "size_Hr", "size_Hstar"]
    rows = []
    rng = np.arange(states.shape[0])
    for t in traces:
        sel = np.asarray(t.selection)
        u = inputs[rng, sel]
        H = t.H.sizes
        Hr = getattr(t, "Hr", t.H).sizes
        Hs = getattr(t, "Hstar", t.H).sizes
        for n in rng:
            rows.append([t.iteration, n, *states[n], t.V.values[n], *u[n], H[n], Hr[n], Hs[n]])
    return header, rows


def write_trace(path, table, traces):
    header, rows = trace_rows(table.states, table.inputs, traces)
    write_csv(path, header, rows)


def write_trajectory(path, traj):
    nx = traj.states.shape[1]
    nu = traj.inputs.shape[1]
    header = ["k"] + [f"x{d}" for d in range(nx)] + [f"u{d}" for d in range(nu)] + ["cost", "sigma"]
    rows = []
    for k in range(traj.states.shape[0]):
        if np.isnan(traj.sigma[k]):
            break
        u = traj.inputs[k] if k < traj.inputs.shape[0] else np.full(nu, np.nan)
        c = traj.costs[k] if k < traj.costs.shape[0] else np.nan
        rows.append([k, *traj.states[k], *u, c, traj.sigma[k]])
    write_csv(path, header, rows, comments=[f"reason={traj.reason}"])


def write_bounds(path, rows: list, i_star, has_exp: bool):
    header = ["s", "k", "beta", "near_opt"] + (["beta_exp"] if has_exp else [])
    write_csv(path, header, rows, comments=[f"i_star={i_star}"])


def read_i_star(path) -> int | None:
    for line in Path(path).read_text().splitlines():
        if line.startswith("# i_star="):
            v = line.split("=", 1)[1].strip()
            return None if v == "None" else int(v)
    return None


__all__ = ["fmt", "write_csv", "write_json", "write_trace", "write_trajectory", "write_bounds",
           "read_i_star", "trace_rows"]
