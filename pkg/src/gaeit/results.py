"""Reconstruction results shared by the GA and the Gauss-Newton baseline."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .objective import ObjectiveValue

__all__ = ["TraceRow", "ReconResult", "TRACE_FIELDS", "write_trace", "read_trace"]

TRACE_FIELDS = ("generation", "best_fitness", "mean_fitness", "forward_solves", "elapsed_ms")


@dataclass
class TraceRow:
    """One generation (GA) or one outer iteration (NR).

    ``forward_solves`` and ``elapsed_ms`` are increments for this row, so a
    run's totals are column sums.
    """

    generation: int
    best_fitness: float
    mean_fitness: float
    forward_solves: int
    elapsed_ms: float
    stage: str = ""


@dataclass
class ReconResult:
    rho_est: np.ndarray
    objective: ObjectiveValue
    termination_reason: str
    trace: list[TraceRow] = field(default_factory=list)
    objective_trace: list[ObjectiveValue] = field(default_factory=list)
    forward_solve_count: int = 0
    jacobian_count: int = 0
    wall_time: float = 0.0
    generations: int = 0
    stages: dict = field(default_factory=dict)
    solver: str = ""

    def summary(self) -> dict:
        return {
            "solver": self.solver,
            "termination_reason": self.termination_reason,
            "objective_total": self.objective.total,
            "data_term": self.objective.data_term,
            "reg_term": self.objective.reg_term,
            "forward_solve_count": self.forward_solve_count,
            "jacobian_count": self.jacobian_count,
            "wall_time": self.wall_time,
            "generations": self.generations,
            "stages": dict(self.stages),
        }


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trace(rows: list[TraceRow], path, with_stage: Optional[bool] = None) -> None:
    """Write the trace CSV; the ``stage`` column appears for staged (hybrid) runs."""
    if with_stage is None:
        with_stage = any(r.stage for r in rows)
    header = list(TRACE_FIELDS) + (["stage"] if with_stage else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        vals = [r.generation, r.best_fitness, r.mean_fitness, r.forward_solves, r.elapsed_ms]
        if with_stage:
            vals.append(r.stage)
        w.writerow([_fmt(v) for v in vals])
    Path(path).write_text(buf.getvalue())


def read_trace(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRACE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigurationError(f"{path}: trace is missing columns {sorted(missing)}")
        return [
            TraceRow(
                int(row["generation"]),
                float(row["best_fitness"]),
                float(row["mean_fitness"]),
                int(row["forward_solves"]),
                float(row["elapsed_ms"]),
                row.get("stage", "") or "",
            )
            for row in reader
        ]
