"""Experiment report rows and CSV output."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

HEADER = ("method", "problem", "dim", "err_train_2", "err_test_2", "dofs", "n_train",
          "cpu_train_s", "cpu_test_s", "extra")
_FLOATS = ("err_train_2", "err_test_2", "cpu_train_s", "cpu_test_s")
_INTS = ("dim", "dofs", "n_train")


@dataclass
class ExperimentReport:
    method: str
    problem: str
    dim: int
    err_train_2: float = math.nan
    err_test_2: float = math.nan
    dofs: int = 0
    n_train: int = 0
    cpu_train_s: float = 0.0
    cpu_test_s: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return self.extra.get("status", "ok")


def _fmt(v) -> str:
    # 17 significant digits so floats round-trip exactly
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{float(v):.16e}"


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    return v


def format_row(r: ExperimentReport) -> list:
    return [r.method, r.problem, str(int(r.dim)), _fmt(r.err_train_2), _fmt(r.err_test_2),
            str(int(r.dofs)), str(int(r.n_train)), _fmt(r.cpu_train_s), _fmt(r.cpu_test_s),
            json.dumps(_plain(r.extra), sort_keys=True)]


def write_report(rows, path, append: bool = False) -> None:
    """CSV with the fixed header; ``append`` adds rows to an existing file."""
    import os
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    with open(path, "a" if append else "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        if not exists:
            w.writerow(HEADER)
        for r in rows:
            w.writerow(format_row(r))


def _parse_float(s):
    return math.nan if s == "n/a" else float(s)


def read_report(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        rd = csv.reader(fh)
        head = tuple(next(rd))
        if head != HEADER:
            raise ValueError(f"unexpected header {head}")
        rows = []
        for rec in rd:
            kv = dict(zip(HEADER, rec))
            rows.append(ExperimentReport(
                method=kv["method"], problem=kv["problem"],
                **{k: int(kv[k]) for k in _INTS},
                **{k: _parse_float(kv[k]) for k in _FLOATS},
                extra=json.loads(kv["extra"])))
        return rows


def dump_trajectory(traj, path) -> None:
    """CSV with columns t, y_1..y_d, u_1..u_m, running_cost; one row per step."""
    d = traj.states.shape[1]
    m = traj.controls.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"y_{i + 1}" for i in range(d)] + [f"u_{i + 1}" for i in range(m)]
                   + ["running_cost"])
        for t, y, u, c in zip(traj.times, traj.states, traj.controls, traj.running_cost):
            w.writerow([_fmt(t)] + [_fmt(v) for v in y] + [_fmt(v) for v in u] + [_fmt(c)])
