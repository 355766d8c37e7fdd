"""Optimizer run records and their CSV/JSON persistence."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["OptimizerRun", "format_float", "write_csv"]


def format_float(x) -> str:
    """Shortest round-tripping decimal; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def write_csv(path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="ascii", newline="\n")


@dataclass(eq=False)
class OptimizerRun:
    """Result of one optimisation run.

    ``history`` is a list of dicts keyed by ``columns``; ``wall_time`` is
    kept out of the history so reruns produce identical CSVs.
    """

    kind: str
    columns: list[str]
    history: list[dict] = field(default_factory=list)
    d_final: np.ndarray | None = None
    alpha_final: np.ndarray | None = None
    alpha_rounded: np.ndarray | None = None
    evaluations: int = 0
    wall_time: float = 0.0
    status: str = "ok"
    metadata: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.history)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.history], dtype=float)

    def write_history(self, path) -> None:
        write_csv(path, self.columns, ([r.get(c) for c in self.columns] for r in self.history))

    def write_metadata(self, path) -> None:
        meta = dict(self.metadata)
        meta.update(kind=self.kind, iterations=self.iterations, evaluations=self.evaluations, status=self.status)
        Path(path).write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n", encoding="ascii")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
