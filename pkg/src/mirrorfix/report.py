"""Error statistics of solved trajectories against simulator truth."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import JoinMismatch, SchemaMismatch
from .geodesy import EcefPoint, range_between
from .simulator import read_truth_csv


@dataclass
class ErrorReport:
    epochs: list[int]
    errors: list[float]

    @property
    def median(self) -> float:
        return float(np.median(self.errors)) if self.errors else float("nan")

    @property
    def p95(self) -> float:
        return float(np.percentile(self.errors, 95)) if self.errors else float("nan")

    @property
    def max(self) -> float:
        return float(np.max(self.errors)) if self.errors else float("nan")

    def cdf(self) -> list[tuple[float, float]]:
        e = sorted(self.errors)
        n = len(e)
        return [(v, (i + 1) / n) for i, v in enumerate(e)]

    def summary(self) -> dict:
        return {"count": len(self.errors), "median_m": self.median, "p95_m": self.p95, "max_m": self.max}


def read_solution_csv(path) -> dict[int, EcefPoint]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"epoch_ms", "x", "y", "z"}
        if not need.issubset(reader.fieldnames or ()):
            raise SchemaMismatch(f"solution CSV needs columns {sorted(need)}")
        return {
            int(r["epoch_ms"]): EcefPoint(float(r["x"]), float(r["y"]), float(r["z"])) for r in reader
        }


def error_report(solutions: dict[int, EcefPoint], truth: dict[int, EcefPoint]) -> ErrorReport:
    epochs = sorted(solutions)
    for e in epochs:
        if e not in truth:
            raise JoinMismatch(e, "truth")
    return ErrorReport(epochs, [range_between(solutions[e], truth[e]) for e in epochs])


def report(solutions_csv, truth_csv) -> ErrorReport:
    truth = {e: rec["position"] for e, rec in read_truth_csv(truth_csv).items()}
    return error_report(read_solution_csv(solutions_csv), truth)


def serialize_errors(rep: ErrorReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch_ms", "error_m"])
    for e, v in zip(rep.epochs, rep.errors):
        w.writerow([e, repr(v)])
    return buf.getvalue()


def serialize_cdf(rep: ErrorReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["error_m", "cdf"])
    for v, p in rep.cdf():
        w.writerow([repr(v), repr(p)])
    return buf.getvalue()
