"""Comparison metrics: testing error, integral error and error over tank.

Integrals use the trapezoidal rule on explicit timestamps, so records thinned
by :func:`gnssfuel.signal_pipeline.exclude_stopped` integrate correctly
(across a gap the trapezoid bridges the two neighbouring samples).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientFuel, LengthMismatch, NonMonotonicTime, ZeroTruthIntegral

SECONDS_PER_HOUR = 3600.0
DEFAULT_TANK_L = 10.4
_TANK_REL_TOL = 1e-9


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise LengthMismatch(f"prediction has {pred.size} values, truth has {truth.size}")
    return pred, truth


def _times(timestamps, n):
    t = np.asarray(timestamps, dtype=float)
    if t.size != n:
        raise LengthMismatch(f"{t.size} timestamps for {n} values")
    if n < 2:
        raise LengthMismatch("need at least two samples to integrate")
    if np.any(np.diff(t) <= 0):
        raise NonMonotonicTime("timestamps must be strictly increasing")
    return t


def testing_error(pred, truth, ddof: int = 0):
    """Mean and standard deviation (population by default) of ``pred - truth``."""
    pred, truth = _pair(pred, truth)
    if pred.size == 0:
        raise LengthMismatch("no samples")
    r = pred - truth
    return float(np.mean(r)), float(np.std(r, ddof=ddof))


def cumulative_fuel(f, timestamps) -> np.ndarray:
    """Running trapezoidal integral in litres, starting at 0 on the first sample."""
    f = np.asarray(f, dtype=float)
    t = _times(timestamps, f.size)
    areas = 0.5 * (f[1:] + f[:-1]) * np.diff(t) / SECONDS_PER_HOUR
    return np.concatenate([[0.0], np.cumsum(areas)])


def integral_fuel(f, timestamps) -> float:
    f = np.asarray(f, dtype=float)
    t = _times(timestamps, f.size)
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(t)) / SECONDS_PER_HOUR)


def integral_error(pred, truth, timestamps) -> float:
    """Percent difference of predicted over measured litres."""
    pred, truth = _pair(pred, truth)
    total = integral_fuel(truth, timestamps)
    if not total > 0:
        raise ZeroTruthIntegral("measured fuel integral is zero")
    return 100.0 * (integral_fuel(pred, timestamps) - total) / total


def tank_boundaries(truth, timestamps, tank_l: float) -> list[int]:
    """Sample indices closing each full tank, preceded by 0.

    Tank ``k`` closes at the first sample whose cumulative truth reaches
    ``k * tank_l`` (with a 1e-9 relative allowance for summation round-off).
    """
    if not tank_l > 0:
        raise ValueError("tank_l must be positive")
    cum = cumulative_fuel(truth, timestamps)
    n_tanks = int(math.floor(cum[-1] / tank_l * (1 + _TANK_REL_TOL)))
    thresholds = tank_l * np.arange(1, n_tanks + 1) * (1 - _TANK_REL_TOL)
    ends = np.searchsorted(cum, thresholds, side="left")
    return [0, *ends.tolist()]


def error_over_tank(pred, truth, timestamps, tank_l: float = DEFAULT_TANK_L, ddof: int = 0):
    """Per-tank integral errors and their mean / standard deviation.

    Consecutive tanks share their boundary sample; the trailing partial tank is
    discarded. Returns ``(errors_pct, mean_pct, std_pct)``.
    """
    pred, truth = _pair(pred, truth)
    t = _times(timestamps, truth.size)
    bounds = tank_boundaries(truth, t, tank_l)
    if len(bounds) < 2:
        total = integral_fuel(truth, t)
        raise InsufficientFuel(f"{total:.4g} l measured, less than one {tank_l} l tank")
    errors = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sl = slice(lo, hi + 1)
        errors.append(integral_error(pred[sl], truth[sl], t[sl]))
    arr = np.array(errors)
    return errors, float(np.mean(arr)), float(np.std(arr, ddof=ddof)) if arr.size > ddof else math.nan


@dataclass
class MetricReport:
    err_mean: float
    err_std: float
    integral_error_pct: float
    eot_tank_size_l: float
    eot_errors_pct: list = field(default_factory=list)
    eot_mean_pct: float = math.nan
    eot_std_pct: float = math.nan

    CSV_COLUMNS = (
        "err_mean_lh",
        "err_std_lh",
        "integral_error_pct",
        "eot_tank_l",
        "eot_n_tanks",
        "eot_mean_pct",
        "eot_std_pct",
    )

    @property
    def has_eot(self) -> bool:
        return bool(self.eot_errors_pct)

    def csv_fields(self) -> list[str]:
        eot = (
            [str(len(self.eot_errors_pct)), repr(self.eot_mean_pct), repr(self.eot_std_pct)]
            if self.has_eot
            else ["", "", ""]
        )
        return [
            repr(self.err_mean),
            repr(self.err_std),
            repr(self.integral_error_pct),
            repr(self.eot_tank_size_l),
            *eot,
        ]

    def dumps(self) -> str:
        lines = [
            f"err_mean = {self.err_mean!r}",
            f"err_std = {self.err_std!r}",
            f"integral_error_pct = {self.integral_error_pct!r}",
            f"eot_tank_size_l = {self.eot_tank_size_l!r}",
            "eot_errors_pct = " + ", ".join(repr(e) for e in self.eot_errors_pct),
            f"eot_mean_pct = {self.eot_mean_pct!r}",
            f"eot_std_pct = {self.eot_std_pct!r}",
        ]
        return "\n".join(lines) + "\n"


def evaluate(pred, truth, timestamps, tank_l: float = DEFAULT_TANK_L, ddof: int = 0) -> MetricReport:
    """All three metrics. A record too short for one tank leaves the EOT fields empty."""
    mean, std = testing_error(pred, truth, ddof)
    report = MetricReport(mean, std, integral_error(pred, truth, timestamps), tank_l)
    try:
        errors, m, s = error_over_tank(pred, truth, timestamps, tank_l, ddof)
    except InsufficientFuel:
        return report
    report.eot_errors_pct = errors
    report.eot_mean_pct = m
    report.eot_std_pct = s
    return report


def csv_table(rows: Sequence[tuple[str, str, Optional[MetricReport]]]) -> str:
    """Comparison table: one ``(name, kind, report)`` per line under a shared header.

    A ``None`` report (model could not be evaluated) leaves its metric fields empty.
    """
    blank = [""] * len(MetricReport.CSV_COLUMNS)
    lines = [",".join(("model", "kind", *MetricReport.CSV_COLUMNS))]
    for name, kind, rep in rows:
        lines.append(",".join((name, kind, *(rep.csv_fields() if rep is not None else blank))))
    return "\n".join(lines) + "\n"
