"""Conditioning of raw GNSS/IMU/CAN streams into a synchronized 10 Hz dataset.

Three raw streams arrive at different rates (speed at 10 Hz, acceleration at
100 Hz, fuel flow at 20 Hz). Each one is low-pass filtered without phase
delay, then acceleration and fuel flow are interpolated with a natural cubic
spline onto the velocity sample instants.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.signal import lfilter, lfiltic

from .errors import InputError, InvalidCutoff, NoOverlap, SeriesTooShort

MIN_FILTER_SAMPLES = 10
DEFAULT_V_EPS_KMH = 0.05
_TIME_TOL = 1e-9


class Quantity(enum.Enum):
    VELOCITY = "velocity"  # km/h
    ACCELERATION = "acceleration"  # m/s^2
    FUEL_FLOW = "fuel_flow"  # l/h


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SensorSeries:
    """Uniformly sampled scalar stream; sample ``i`` sits at ``start_time + i / rate_hz``."""

    start_time: float
    rate_hz: float
    values: np.ndarray
    quantity: Quantity

    def __post_init__(self):
        if not (self.rate_hz > 0 and math.isfinite(self.rate_hz)):
            raise InputError(f"rate_hz must be positive, got {self.rate_hz}")
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "quantity", Quantity(self.quantity))
        if self.values.ndim != 1:
            raise InputError("values must be one-dimensional")

    def __len__(self) -> int:
        return self.values.size

    @property
    def timestamps(self) -> np.ndarray:
        return self.start_time + np.arange(self.values.size) / self.rate_hz

    @property
    def end_time(self) -> float:
        return self.start_time + (self.values.size - 1) / self.rate_hz

    def with_values(self, values) -> "SensorSeries":
        return SensorSeries(self.start_time, self.rate_hz, values, self.quantity)


@dataclass(frozen=True, eq=False)
class SyncedDataset:
    """Synchronized ``(t, v, a, f)`` records.

    Fresh out of :func:`resample_and_sync` the timestamps are spaced 0.1 s
    apart; after :func:`exclude_stopped` they are merely strictly increasing,
    which is all the metrics require.
    """

    t: np.ndarray
    v: np.ndarray
    a: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        for name in ("t", "v", "a", "f"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.t.size
        if not (self.v.size == self.a.size == self.f.size == n):
            raise InputError("dataset columns must have equal length")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise InputError("dataset timestamps must be strictly increasing")
        if np.any(self.v < 0) or np.any(self.f < 0):
            raise InputError("velocity and fuel flow must be non-negative")

    def __len__(self) -> int:
        return self.t.size

    def subset(self, index) -> "SyncedDataset":
        """Rows selected by a boolean mask or a sorted index array."""
        return SyncedDataset(self.t[index], self.v[index], self.a[index], self.f[index])

    def is_uniform(self, step: float = 0.1, tol: float = _TIME_TOL) -> bool:
        return bool(np.all(np.abs(np.diff(self.t) - step) <= tol))

    @classmethod
    def empty(cls) -> "SyncedDataset":
        z = np.empty(0)
        return cls(z, z, z, z)


@dataclass(frozen=True)
class FilterSpec:
    cutoff_hz: float = 3.0
    pole_count: int = 2

    def __post_init__(self):
        if self.pole_count != 2:
            raise InvalidCutoff("only the two-coincident-pole filter is supported")
        if not (self.cutoff_hz > 0):
            raise InvalidCutoff(f"cutoff must be positive, got {self.cutoff_hz}")

    def check(self, rate_hz: float) -> None:
        if self.cutoff_hz >= rate_hz / 2:
            raise InvalidCutoff(
                f"cutoff {self.cutoff_hz} Hz is not below Nyquist ({rate_hz / 2} Hz)"
            )


# --------------------------------------------------------------------------
# zero-phase low-pass
# --------------------------------------------------------------------------


def double_pole_coefficients(cutoff_hz: float, rate_hz: float):
    """Digital ``(b, a, pole)`` for ``1 / (1 + s/wc)^2``.

    Bilinear transform pre-warped at the cutoff, so each first-order factor
    has magnitude exactly ``1/sqrt(2)`` there and the cascade ``1/2``.
    """
    w = math.tan(math.pi * cutoff_hz / rate_hz)
    gain = w / (1.0 + w)
    pole = (1.0 - w) / (1.0 + w)
    b1 = np.array([gain, gain])
    a1 = np.array([1.0, -pole])
    return np.convolve(b1, b1), np.convolve(a1, a1), pole


def _causal_pass(b, a, pole, x):
    # Start in the steady state of the ramp through the first two samples,
    # so constants and straight lines pass without a startup transient.
    delay = 1.0 + 2.0 * pole / (1.0 - pole)  # DC group delay in samples
    x0 = x[0]
    slope = x[1] - x[0]
    x_past = [x0 - slope, x0 - 2.0 * slope]
    y_past = [x0 - (1.0 + delay) * slope, x0 - (2.0 + delay) * slope]
    zi = lfiltic(b, a, y_past, x_past)
    y, _ = lfilter(b, a, x, zi=zi)
    return y


def _forward_backward(b, a, pole, x):
    y = _causal_pass(b, a, pole, x)
    return _causal_pass(b, a, pole, y[::-1])[::-1]


def pad_length(cutoff_hz: float, rate_hz: float) -> int:
    """Three time constants of the analog pole, in samples."""
    tau = 1.0 / (2.0 * math.pi * cutoff_hz)
    return max(1, math.ceil(3.0 * tau * rate_hz))


def zero_phase_lowpass(series: SensorSeries, spec: FilterSpec | None = None) -> SensorSeries:
    """Low-pass ``series`` with zero net phase.

    The two-pole section runs forward then backward over an odd-reflected,
    padded copy of the signal. The result is the average of that pass order and
    its mirror (backward then forward), which makes the operator commute
    exactly with time reversal. Net magnitude response is the square of the
    single-pass response: 1/4 at the cutoff.
    """
    spec = spec or FilterSpec()
    x = np.asarray(series.values, dtype=float)
    if x.size < MIN_FILTER_SAMPLES:
        raise SeriesTooShort(
            f"{series.quantity.value} series has {x.size} samples, need {MIN_FILTER_SAMPLES}"
        )
    spec.check(series.rate_hz)
    b, a, pole = double_pole_coefficients(spec.cutoff_hz, series.rate_hz)

    n_pad = min(pad_length(spec.cutoff_hz, series.rate_hz), x.size - 1)
    head = 2.0 * x[0] - x[n_pad:0:-1]
    tail = 2.0 * x[-1] - x[-2 : -n_pad - 2 : -1]
    padded = np.concatenate([head, x, tail])

    one_way = _forward_backward(b, a, pole, padded)
    mirrored = _forward_backward(b, a, pole, padded[::-1])[::-1]
    y = 0.5 * (one_way + mirrored)
    return series.with_values(y[n_pad : n_pad + x.size])


# --------------------------------------------------------------------------
# synchronization
# --------------------------------------------------------------------------


def natural_spline(series: SensorSeries) -> CubicSpline:
    return CubicSpline(series.timestamps, series.values, bc_type="natural")


def resample_and_sync(
    v_raw: SensorSeries,
    a_raw: SensorSeries,
    f_raw: SensorSeries,
    spec: FilterSpec | None = None,
) -> SyncedDataset:
    """Filter all three streams and interpolate ``a`` and ``f`` at the velocity instants.

    Only velocity instants inside the common time span of the three streams
    are kept. Interpolated fuel flow (and filtered speed) below zero is
    clamped to zero.
    """
    spec = spec or FilterSpec()
    start = max(v_raw.start_time, a_raw.start_time, f_raw.start_time)
    end = min(v_raw.end_time, a_raw.end_time, f_raw.end_time)
    if not end > start:
        raise NoOverlap(f"streams share no common time span ({start:.3f} s .. {end:.3f} s)")

    v_f = zero_phase_lowpass(v_raw, spec)
    a_f = zero_phase_lowpass(a_raw, spec)
    f_f = zero_phase_lowpass(f_raw, spec)

    t_all = v_f.timestamps
    keep = (t_all >= start - _TIME_TOL) & (t_all <= end + _TIME_TOL)
    if not np.any(keep):
        raise NoOverlap("no velocity sample falls inside the common time span")
    t = t_all[keep]
    v = np.maximum(v_f.values[keep], 0.0)
    a = natural_spline(a_f)(t)
    f = np.maximum(natural_spline(f_f)(t), 0.0)
    return SyncedDataset(t, v, a, f)


def exclude_stopped(ds: SyncedDataset, v_eps: float = DEFAULT_V_EPS_KMH) -> SyncedDataset:
    if v_eps < 0:
        raise InputError("v_eps must be non-negative")
    return ds.subset(ds.v > v_eps)


# --------------------------------------------------------------------------
# CSV formats
# --------------------------------------------------------------------------

RAW_HEADER = "t_s,value"
SYNCED_HEADER = "t_s,v_kmh,a_ms2,f_lh"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_raw_csv(path, series: SensorSeries) -> None:
    lines = [f"# rate_hz={_fmt(series.rate_hz)} quantity={series.quantity.value}", RAW_HEADER]
    lines += [f"{_fmt(t)},{_fmt(x)}" for t, x in zip(series.timestamps, series.values)]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_lines(path) -> list[str]:
    p = Path(path)
    try:
        return p.read_text().splitlines()
    except OSError as exc:
        raise InputError(f"{p}: cannot read ({exc.strerror or exc})") from exc


def _parse_floats(path, lineno: int, line: str, n: int) -> list[float]:
    parts = line.split(",")
    if len(parts) != n:
        raise InputError(f"{path}:{lineno}: expected {n} fields, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise InputError(f"{path}:{lineno}: non-numeric field in {line!r}") from None


def read_raw_csv(path) -> SensorSeries:
    """Parse a raw stream file and check its timestamps against the declared rate."""
    lines = _read_lines(path)
    if not lines or not lines[0].startswith("#"):
        raise InputError(f"{path}:1: missing '# rate_hz=... quantity=...' header")
    meta = {}
    for token in lines[0].lstrip("#").split():
        key, sep, value = token.partition("=")
        if sep:
            meta[key] = value
    try:
        rate = float(meta["rate_hz"])
        quantity = Quantity(meta["quantity"])
    except (KeyError, ValueError):
        raise InputError(f"{path}:1: malformed header {lines[0]!r}") from None
    if len(lines) < 2 or lines[1].strip() != RAW_HEADER:
        raise InputError(f"{path}:2: expected column header {RAW_HEADER!r}")

    rows = [
        _parse_floats(path, i + 1, line, 2)
        for i, line in enumerate(lines[2:], start=2)
        if line.strip()
    ]
    if not rows:
        raise InputError(f"{path}: no samples")
    data = np.array(rows)
    t = data[:, 0]
    expected = t[0] + np.arange(t.size) / rate
    bad = np.flatnonzero(np.abs(t - expected) > 1e-6)
    if bad.size:
        raise InputError(
            f"{path}:{bad[0] + 3}: timestamp {t[bad[0]]!r} inconsistent with rate_hz={rate}"
        )
    return SensorSeries(float(t[0]), rate, data[:, 1], quantity)


def write_synced_csv(path, ds: SyncedDataset) -> None:
    lines = [SYNCED_HEADER]
    lines += [
        f"{_fmt(t)},{_fmt(v)},{_fmt(a)},{_fmt(f)}"
        for t, v, a, f in zip(ds.t, ds.v, ds.a, ds.f)
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_synced_csv(path) -> SyncedDataset:
    lines = _read_lines(path)
    if not lines or lines[0].strip() != SYNCED_HEADER:
        raise InputError(f"{path}:1: expected header {SYNCED_HEADER!r}")
    rows = [
        _parse_floats(path, i + 1, line, 4)
        for i, line in enumerate(lines[1:], start=1)
        if line.strip()
    ]
    if not rows:
        return SyncedDataset.empty()
    data = np.array(rows)
    try:
        return SyncedDataset(data[:, 0], data[:, 1], data[:, 2], data[:, 3])
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def series_by_quantity(series: Sequence[SensorSeries]) -> dict[Quantity, SensorSeries]:
    out: dict[Quantity, SensorSeries] = {}
    for s in series:
        if s.quantity in out:
            raise InputError(f"duplicate {s.quantity.value} stream")
        out[s.quantity] = s
    return out
