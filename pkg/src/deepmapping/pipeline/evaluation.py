"""Suite statistics: ATE quartiles, point distance and success rate per method."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np

DEFAULT_THRESHOLD_FRAC = 0.02

REPORT_COLUMNS = ("method", "runs", "median_ate", "q1_ate", "q3_ate",
                  "median_point_distance", "success_rate", "wall_time")


@dataclass(frozen=True)
class MethodSummary:
    method: str
    runs: int
    median_ate: float
    q1_ate: float
    q3_ate: float
    median_point_distance: float
    success_rate: float
    wall_time: float


def ate_threshold(world_width: float, frac: float = DEFAULT_THRESHOLD_FRAC) -> float:
    """Success threshold in pixels: a fixed fraction of the world width."""
    if world_width <= 0 or frac <= 0:
        raise ValueError("world width and threshold fraction must be positive")
    return frac * world_width


def _method_and_metrics(result) -> tuple[str, dict, float]:
    if isinstance(result, dict):
        return result["method"], result.get("metrics") or {}, float(result.get("wall_time", 0.0))
    return result.method, result.metrics, float(result.wall_time)


def summarize(values) -> tuple[float, float, float]:
    """(Q1, median, Q3) with linear interpolation between order statistics."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ValueError("summarize: no values")
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return float(q1), float(med), float(q3)


def evaluate_suite(results, ate_threshold: float) -> list[MethodSummary]:
    """Group results by method and compute box-plot statistics.

    ``results`` may hold :class:`RegistrationResult` objects or their
    ``to_dict`` form.  Every result must carry ground-truth metrics.
    Methods are reported in order of first appearance.
    """
    results = list(results)
    if not results:
        raise ValueError("evaluate_suite: no results")
    if not ate_threshold > 0:
        raise ValueError("evaluate_suite: threshold must be positive")
    groups: dict[str, list[tuple[dict, float]]] = {}
    for r in results:
        method, metrics, wall = _method_and_metrics(r)
        if "ate" not in metrics:
            raise ValueError(f"evaluate_suite: result for {method!r} has no ground-truth metrics")
        groups.setdefault(method, []).append((metrics, wall))
    report = []
    for method, rows in groups.items():
        ates = [m["ate"] for m, _ in rows]
        dists = [m.get("point_distance", math.nan) for m, _ in rows]
        q1, med, q3 = summarize(ates)
        report.append(MethodSummary(
            method=method,
            runs=len(rows),
            median_ate=med,
            q1_ate=q1,
            q3_ate=q3,
            median_point_distance=summarize(dists)[1],
            success_rate=sum(a < ate_threshold for a in ates) / len(ates),
            wall_time=math.fsum(w for _, w in rows),
        ))
    return report


def report_csv(report: list[MethodSummary], meta: dict | None = None) -> str:
    """CSV table; ``meta`` entries are written first as ``# key=value`` lines."""
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}={value}\n")
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report:
        writer.writerow(asdict(row))
    return buf.getvalue()


def report_table(report: list[MethodSummary]) -> str:
    lines = [f"{'method':<24} {'runs':>4} {'med ATE':>9} {'Q1':>8} {'Q3':>8} {'med PD':>8} {'success':>8}"]
    for r in report:
        lines.append(f"{r.method:<24} {r.runs:>4} {r.median_ate:>9.3f} {r.q1_ate:>8.3f} "
                     f"{r.q3_ate:>8.3f} {r.median_point_distance:>8.3f} {r.success_rate:>8.1%}")
    return "\n".join(lines)
