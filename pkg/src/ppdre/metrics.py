"""Error metrics and CSV report writers."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METRICS = ("rmse", "rmsle", "mae_mi", "nmse", "ase", "error")
REPORT_HEADER = ("scenario", "method", "seed", "metric", "value", "n", "runtime_s")
GRID_HEADER = ("x1", "x2", "r_true", "r_hat")
CLAMP_FLOOR = 1e-12
REPORT_NOTES = (
    "# nmse divides by the population variance (denominator n) of the test responses",
)


def _pair(estimates, truths):
    a = np.asarray(estimates, float).ravel()
    b = np.asarray(truths, float).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} estimates vs {b.size} truths")
    if a.size == 0:
        raise ValueError("empty input")
    return a, b


def rmse(estimates, truths) -> float:
    a, b = _pair(estimates, truths)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmsle(estimates, truths) -> float:
    a, b = _pair(estimates, truths)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("rmsle needs strictly positive inputs")
    return float(np.sqrt(np.mean((np.log(a) - np.log(b)) ** 2)))


def clamp_positive(values, floor: float = CLAMP_FLOOR):
    """Replace values below ``floor`` by ``floor``; returns ``(values, clamped)``."""
    v = np.asarray(values, float)
    clamped = bool(np.any(v < floor))
    return np.maximum(v, floor), clamped


def mae_mi(estimate: float, truth: float) -> float:
    return abs(float(estimate) - float(truth))


def nmse(y_true, y_pred) -> float:
    y, yhat = _pair(y_true, y_pred)
    var = float(np.var(y))
    if var <= 0:
        raise ValueError("test responses have zero variance")
    return float(np.mean((y - yhat) ** 2) / var)


def ase(g_hat, g_star, T_sample) -> float:
    """Average squared gap between two dose-response curves over ``T_sample``.
    Curves may be callables or arrays already evaluated at ``T_sample``."""
    T = np.asarray(T_sample, float).ravel()
    a = g_hat(T) if callable(g_hat) else g_hat
    b = g_star(T) if callable(g_star) else g_star
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


@dataclass(frozen=True)
class MetricRecord:
    scenario: str
    method: str
    seed: int
    metric: str
    value: float
    n: int
    runtime_s: float | None = None
    clamped: bool = False

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.metric != "error" and not math.isfinite(self.value):
            raise ValueError(f"{self.metric} value must be finite")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_report(records, path) -> None:
    """Write metric records as CSV (LF endings, 17 significant digits).

    Leading ``#`` lines document conventions and list runs whose estimates
    were clamped before taking logs; the header row follows.
    """
    path = Path(path)
    lines = list(REPORT_NOTES)
    for r in records:
        if r.clamped:
            lines.append(f"# clamped at {CLAMP_FLOOR:g}: {r.scenario} {r.method} seed={r.seed} {r.metric}")
    lines.append(",".join(REPORT_HEADER))
    for r in records:
        runtime = "" if r.runtime_s is None else _fmt(r.runtime_s)
        lines.append(",".join([r.scenario, r.method, str(r.seed), r.metric, _fmt(r.value), str(r.n), runtime]))
    try:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def read_report(path) -> list[MetricRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    out = []
    for row in reader:
        out.append(MetricRecord(
            row["scenario"], row["method"], int(row["seed"]), row["metric"], float(row["value"]),
            int(row["n"]), float(row["runtime_s"]) if row["runtime_s"] else None,
        ))
    return out


def lattice(lo: float = -3.0, hi: float = 3.0, size: int = 41) -> np.ndarray:
    g = np.linspace(lo, hi, size)
    x1, x2 = np.meshgrid(g, g, indexing="ij")
    return np.column_stack([x1.ravel(), x2.ravel()])


def write_grid_dump(points, r_true, r_hat, path) -> None:
    """Rows ``x1,x2,r_true,r_hat`` over a 2-d lattice, for heatmaps."""
    points = np.asarray(points, float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("grid dumps need 2-d points")
    r_true = np.asarray(r_true, float).ravel()
    r_hat = np.asarray(r_hat, float).ravel()
    lines = [",".join(GRID_HEADER)]
    for (x1, x2), t, h in zip(points, r_true, r_hat):
        lines.append(",".join(map(_fmt, (x1, x2, t, h))))
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
