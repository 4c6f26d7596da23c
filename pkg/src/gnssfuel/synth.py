"""Synthetic trips with known ground truth.

A trip is a chain of speed pieces: holds at constant speed and transitions
shaped by the quintic smoothstep ``10u^3 - 15u^4 + 6u^5``, which has zero
slope and curvature at both ends. Speed, longitudinal acceleration and
distance therefore all have closed forms. Road grade is a sinusoid in
travelled distance, so a stopped car sits on a constant slope. The IMU
reading is the gravity-inclusive ``a = a_x + g*sin(theta)``.

Fuel flow is the planted estimator evaluated on the analytic ``(v, a)`` while
moving; during stops it is ``idle_flow_lh`` with the engine on and 0 with the
engine off.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .engine import EngineState
from .errors import InputError
from .estimators import Params, PbParams, predict
from .signal_pipeline import Quantity, SensorSeries, SyncedDataset

G = 9.80665
KMH = 3.6  # km/h per m/s

V_RATE_HZ = 10.0
A_RATE_HZ = 100.0
F_RATE_HZ = 20.0

# roughly a 1.6 t diesel saloon: ~5.5 l/h at 100 km/h on the flat
DEFAULT_PB_ALPHA = (0.1, 0.02, 2.0e-4, 1.5e-6)


class Profile(str, enum.Enum):
    URBAN_STOP_GO = "urban_stop_go"
    HIGHWAY_CRUISE = "highway_cruise"
    MIXED_RAMP = "mixed_ramp"


@dataclass(frozen=True)
class PerQuantity:
    velocity: float  # km/h
    acceleration: float  # m/s^2
    fuel_flow: float  # l/h


SENSOR_RESOLUTION = PerQuantity(0.01, 0.001, 0.001)
NO_NOISE = PerQuantity(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EngineTone:
    freq_hz: float = 26.6
    amplitude: float = 0.02  # m/s^2


@dataclass(frozen=True)
class TripSpec:
    """Everything that determines a synthetic trip.

    A resolution of 0 disables quantization for that stream (the noiseless
    limit); ``noise_std`` of 0 disables noise.
    """

    duration_s: float = 1800.0
    profile: Profile = Profile.MIXED_RAMP
    planted_model: Params = field(default_factory=lambda: PbParams(DEFAULT_PB_ALPHA))
    noise_std: PerQuantity = SENSOR_RESOLUTION
    quantization: PerQuantity = SENSOR_RESOLUTION
    seed: int = 0
    idle_flow_lh: float = 0.8
    engine_tone: Optional[EngineTone] = EngineTone()
    engine_on_probability: float = 0.5
    grade_pct: float = 2.0
    grade_wavelength_m: float = 2000.0
    cruise_kmh: float = 110.0
    speed_variation_kmh: float = 20.0
    highway_accel_ms2: tuple = (0.05, 0.2)  # mean accel range of highway speed changes
    start_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "profile", Profile(self.profile))
        if not self.duration_s > 0:
            raise InputError("duration_s must be positive")
        for name in ("noise_std", "quantization"):
            q = getattr(self, name)
            if min(q.velocity, q.acceleration, q.fuel_flow) < 0:
                raise InputError(f"{name} entries must be non-negative")
        if not 0.0 <= self.engine_on_probability <= 1.0:
            raise InputError("engine_on_probability must lie in [0, 1]")

    @classmethod
    def noiseless(cls, **kw) -> "TripSpec":
        return cls(noise_std=NO_NOISE, quantization=NO_NOISE, **kw)


class Trip(NamedTuple):
    v_raw: SensorSeries
    a_raw: SensorSeries
    f_raw: SensorSeries
    truth: SyncedDataset
    labels: list  # (start_s, end_s, EngineState) per stop


# --------------------------------------------------------------------------
# speed profile
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Piece:
    t0: float
    duration: float
    v0: float  # km/h
    v1: float

    @property
    def t1(self):
        return self.t0 + self.duration


class SpeedProfile:
    """Piecewise-smooth speed with analytic acceleration and distance (relative time)."""

    def __init__(self, pieces: list[_Piece]):
        self.pieces = pieces
        self.starts = np.array([p.t0 for p in pieces])
        self.v0 = np.array([p.v0 for p in pieces])
        self.dv = np.array([p.v1 - p.v0 for p in pieces])
        self.T = np.array([p.duration for p in pieces])
        # distance (m) at the start of each piece
        lengths = self.T * (self.v0 + 0.5 * self.dv) / KMH
        self.s0 = np.concatenate([[0.0], np.cumsum(lengths)[:-1]])

    @property
    def duration(self) -> float:
        return self.pieces[-1].t1

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, len(self.pieces) - 1)
        u = np.clip((t - self.starts[k]) / self.T[k], 0.0, 1.0)
        return k, u

    def speed(self, t):
        k, u = self._locate(t)
        return self.v0[k] + self.dv[k] * u**3 * (10 - 15 * u + 6 * u**2)

    def accel(self, t):
        """Longitudinal acceleration dv/dt in m/s^2."""
        k, u = self._locate(t)
        return self.dv[k] / KMH / self.T[k] * 30 * u**2 * (1 - u) ** 2

    def distance(self, t):
        k, u = self._locate(t)
        ramp = u**4 * (2.5 - 3 * u + u**2)  # integral of the smoothstep
        return self.s0[k] + self.T[k] / KMH * (self.v0[k] * u + self.dv[k] * ramp)

    def stops(self) -> list[tuple[float, float]]:
        """Maximal standstill intervals; back-to-back stationary pieces form one stop."""
        out: list[tuple[float, float]] = []
        for p in self.pieces:
            if p.v0 == 0 and p.v1 == 0:
                if out and out[-1][1] == p.t0:
                    out[-1] = (out[-1][0], p.t1)
                else:
                    out.append((p.t0, p.t1))
        return out


class _Builder:
    MIN_RAMP_S = 4.0

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.pieces: list[_Piece] = []
        self.t = 0.0
        self.v = 0.0

    def hold(self, seconds):
        if seconds > 0:
            self.pieces.append(_Piece(self.t, seconds, self.v, self.v))
            self.t += seconds

    def ramp(self, v_target, mean_accel):
        """Smooth transition at ``mean_accel`` m/s^2 average (peak is 1.875x)."""
        dv = v_target - self.v
        if dv == 0:
            return
        seconds = max(abs(dv) / KMH / mean_accel, self.MIN_RAMP_S)
        self.pieces.append(_Piece(self.t, seconds, self.v, v_target))
        self.t += seconds
        self.v = v_target

    def urban(self, until):
        u = self.rng.uniform
        while self.t < until:
            if self.v == 0:
                self.hold(u(8, 30))
            self.ramp(round(u(30, 55)), u(0.8, 1.4))
            self.hold(u(10, 40))
            if u() < 0.4:
                self.ramp(round(u(20, 60)), u(0.4, 0.9))
                self.hold(u(5, 20))
            self.ramp(0.0, u(0.7, 1.2))

    def highway(self, until, cruise, variation, accel_range):
        u = self.rng.uniform
        if self.v != cruise:
            self.ramp(cruise, u(0.6, 1.0))
        while self.t < until:
            self.hold(u(60, 180))
            if variation > 0:
                self.ramp(round(cruise + u(-variation, variation), 1), u(*accel_range))


def speed_profile(spec: TripSpec) -> SpeedProfile:
    """Deterministic speed profile for ``spec`` (times relative to ``start_time``)."""
    rng = np.random.default_rng([spec.seed, 0])
    b = _Builder(rng)
    D = spec.duration_s
    if spec.profile is Profile.URBAN_STOP_GO:
        b.hold(5.0)
        b.urban(D)
    elif spec.profile is Profile.HIGHWAY_CRUISE:
        b.v = spec.cruise_kmh
        b.highway(D, spec.cruise_kmh, spec.speed_variation_kmh, spec.highway_accel_ms2)
    else:
        b.hold(5.0)
        b.urban(0.35 * D)
        b.highway(0.8 * D, spec.cruise_kmh, spec.speed_variation_kmh, spec.highway_accel_ms2)
        b.ramp(50.0, 0.8)
        b.urban(D - 30.0)
    b.hold(max(0.0, D - b.t) + 1.0)  # pad past the requested end
    return SpeedProfile(b.pieces)


# --------------------------------------------------------------------------
# trip generation
# --------------------------------------------------------------------------


def _slope_accel(spec: TripSpec, distance_m):
    grade = spec.grade_pct / 100.0 * np.sin(2 * np.pi * distance_m / spec.grade_wavelength_m)
    return G * np.sin(np.arctan(grade))


def _stop_states(spec: TripSpec, profile: SpeedProfile):
    rng = np.random.default_rng([spec.seed, 1])
    stops = [(t0, min(t1, spec.duration_s)) for t0, t1 in profile.stops() if t0 < spec.duration_s]
    draws = rng.random(len(stops))
    return [
        (t0, t1, EngineState.ON if d < spec.engine_on_probability else EngineState.OFF)
        for (t0, t1), d in zip(stops, draws)
    ]


def _in_intervals(t, intervals, state):
    mask = np.zeros(np.shape(t), dtype=bool)
    for t0, t1, s in intervals:
        if s is state:
            mask |= (t >= t0) & (t < t1)
    return mask


def _true_signals(spec: TripSpec, profile: SpeedProfile, states, t_rel):
    v = profile.speed(t_rel)
    a_x = profile.accel(t_rel)
    a = a_x + _slope_accel(spec, profile.distance(t_rel))
    moving = v > 0
    f = np.zeros_like(v)
    f[moving] = predict(spec.planted_model, v[moving], a[moving])
    f[_in_intervals(t_rel, states, EngineState.ON) & ~moving] = spec.idle_flow_lh
    return v, a, f


def _sense(x, std, q, rng, mask=None, clamp=False):
    noise = rng.normal(0.0, 1.0, size=x.shape)  # drawn unconditionally: fixed stream layout
    if std > 0:
        x = x + std * (noise if mask is None else noise * mask)
    if clamp:
        x = np.maximum(x, 0.0)
    if q > 0:
        x = np.round(x / q) * q
    return x


def generate_trip(spec: TripSpec = TripSpec()) -> Trip:
    """Raw streams at native rates, the noise-free 10 Hz truth, and stop labels.

    Speed and fuel readings keep an exact zero where the true value is zero
    (standstill, fuel cut-off, engine off); elsewhere noise is added and the
    reading clamped at zero. Acceleration is always noisy. The engine tone is
    present in raw acceleration during engine-on stops only and is kept out
    of the truth dataset.
    """
    profile = speed_profile(spec)
    states = _stop_states(spec, profile)
    noise_rng = np.random.default_rng([spec.seed, 2])
    ns, qs = spec.noise_std, spec.quantization

    def grid(rate):
        return np.arange(int(math.floor(spec.duration_s * rate + 1e-9)) + 1) / rate

    tv, ta, tf = grid(V_RATE_HZ), grid(A_RATE_HZ), grid(F_RATE_HZ)

    v_true, a_true, f_true = _true_signals(spec, profile, states, tv)
    v_read = _sense(v_true, ns.velocity, qs.velocity, noise_rng, mask=v_true > 0, clamp=True)

    _, a_hi, _ = _true_signals(spec, profile, states, ta)
    if spec.engine_tone is not None:
        tone = spec.engine_tone
        on = _in_intervals(ta, states, EngineState.ON)
        a_hi = a_hi + on * tone.amplitude * np.sin(2 * np.pi * tone.freq_hz * ta)
    a_read = _sense(a_hi, ns.acceleration, qs.acceleration, noise_rng)

    _, _, f_hi = _true_signals(spec, profile, states, tf)
    f_read = _sense(f_hi, ns.fuel_flow, qs.fuel_flow, noise_rng, mask=f_hi > 0, clamp=True)

    t0 = spec.start_time
    labels = [(t0 + s, t0 + e, state) for s, e, state in states]
    return Trip(
        SensorSeries(t0, V_RATE_HZ, v_read, Quantity.VELOCITY),
        SensorSeries(t0, A_RATE_HZ, a_read, Quantity.ACCELERATION),
        SensorSeries(t0, F_RATE_HZ, f_read, Quantity.FUEL_FLOW),
        SyncedDataset(t0 + tv, v_true, a_true, f_true),
        labels,
    )
