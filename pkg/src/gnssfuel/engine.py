"""Engine on/off recognition for a stopped vehicle from raw 100 Hz acceleration.

With the engine idling, body acceleration carries the harmonics of the
crankshaft speed (13.3 Hz and 26.6 Hz at 800 rpm). Each stretch of exact
zero speed is cut out of the raw acceleration stream, turned into a Hann
windowed amplitude spectrum on a fixed 0.1 Hz grid, and classified by the
ratio of the peak near the second harmonic to the median level of a
harmonic-free reference band.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, InputError, NoPositives, NoPredictedPositives, SegmentTooShort
from .signal_pipeline import SensorSeries

MIN_SEGMENT_SAMPLES = 256
GRID_STEP_HZ = 0.1
GRID_MAX_HZ = 50.0
FREQ_GRID = np.round(np.arange(1, int(round(GRID_MAX_HZ / GRID_STEP_HZ)) + 1) * GRID_STEP_HZ, 10)


class EngineState(str, enum.Enum):
    ON = "on"
    OFF = "off"


@dataclass(frozen=True, eq=False)
class EngineSegment:
    a_raw: np.ndarray
    start_time: float
    rate_hz: float = 100.0
    label: Optional[EngineState] = None

    def __post_init__(self):
        arr = np.array(self.a_raw, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "a_raw", arr)
        if self.label is not None:
            object.__setattr__(self, "label", EngineState(self.label))

    @property
    def usable(self) -> bool:
        return self.a_raw.size >= MIN_SEGMENT_SAMPLES

    @property
    def end_time(self) -> float:
        return self.start_time + self.a_raw.size / self.rate_hz


@dataclass(frozen=True, eq=False)
class SpectrumSummary:
    freqs: np.ndarray
    amplitude: np.ndarray
    n_segments_averaged: int = 1


@dataclass(frozen=True)
class ClassifierSpec:
    target_hz: float = 26.6
    band_halfwidth_hz: float = 1.5
    threshold: float = 5.0
    baseline_band: tuple = (35.0, 45.0)

    def __post_init__(self):
        lo, hi = self.target_hz - self.band_halfwidth_hz, self.target_hz + self.band_halfwidth_hz
        if not (0 < lo and hi < GRID_MAX_HZ):
            raise InputError("target band must lie inside (0, 50) Hz")
        b_lo, b_hi = self.baseline_band
        if not (0 < b_lo < b_hi <= GRID_MAX_HZ):
            raise InputError("baseline band must lie inside (0, 50] Hz")
        if not self.threshold > 0:
            raise InputError("threshold must be positive")


def _zero_runs(v: np.ndarray) -> list[tuple[int, int]]:
    """Maximal ``[start, stop)`` index runs with ``v == 0``."""
    z = np.concatenate([[0], (v == 0).astype(np.int8), [0]])
    d = np.diff(z)
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def _label_for(t0: float, t1: float, labels) -> Optional[EngineState]:
    best, best_overlap = None, 0.0
    for start, end, label in labels or ():
        overlap = min(t1, end) - max(t0, start)
        if overlap > best_overlap:
            best, best_overlap = EngineState(label), overlap
    return best


def extract_segments(
    v: SensorSeries,
    a_raw: SensorSeries,
    labels: Optional[Sequence[tuple[float, float, str]]] = None,
) -> list[EngineSegment]:
    """Acceleration windows under each run of exact-zero speed readings.

    A speed sample covers ``[t_i, t_i + 1/rate)``; a run of ``k`` zero readings
    therefore spans ``k / rate`` seconds. Windows shorter than 2.56 s are
    dropped. ``labels`` holds ``(start_s, end_s, label)`` intervals; each
    segment takes the label with the largest time overlap.
    """
    vals = np.asarray(v.values)
    dt_v = 1.0 / v.rate_hz
    segments = []
    for i0, i1 in _zero_runs(vals):
        t0 = v.start_time + i0 * dt_v
        t1 = v.start_time + i1 * dt_v
        j0 = max(0, math.ceil((t0 - a_raw.start_time) * a_raw.rate_hz - 1e-6))
        j1 = min(len(a_raw), math.ceil((t1 - a_raw.start_time) * a_raw.rate_hz - 1e-6))
        if j1 - j0 < MIN_SEGMENT_SAMPLES:
            continue
        start = a_raw.start_time + j0 / a_raw.rate_hz
        end = a_raw.start_time + j1 / a_raw.rate_hz
        segments.append(
            EngineSegment(a_raw.values[j0:j1], start, a_raw.rate_hz, _label_for(start, end, labels))
        )
    return segments


def segment_spectrum(seg: EngineSegment) -> SpectrumSummary:
    """Hann-windowed amplitude spectrum, mean removed, on the 0.1 Hz grid.

    Scaled so a sinusoid of amplitude ``A`` on a bin peaks at ``A``.
    """
    if not seg.usable:
        raise SegmentTooShort(
            f"segment has {seg.a_raw.size} samples, need {MIN_SEGMENT_SAMPLES}"
        )
    x = seg.a_raw - seg.a_raw.mean()
    w = np.hanning(x.size)
    amp = 2.0 * np.abs(np.fft.rfft(x * w)) / w.sum()
    freqs = np.fft.rfftfreq(x.size, d=1.0 / seg.rate_hz)
    return SpectrumSummary(FREQ_GRID, np.interp(FREQ_GRID, freqs, amp), 1)


def average_spectra(specs: Sequence[SpectrumSummary]) -> SpectrumSummary:
    if not specs:
        raise EmptyInput("no spectra to average")
    grid = specs[0].freqs
    for s in specs[1:]:
        if s.freqs.shape != grid.shape or not np.allclose(s.freqs, grid, rtol=0, atol=1e-9):
            raise InputError("spectra are on different frequency grids")
    stack = np.sort(np.stack([s.amplitude for s in specs]), axis=0)  # order-free sum
    return SpectrumSummary(grid, stack.mean(axis=0), len(specs))


def harmonic_ratio(spec: SpectrumSummary, cspec: ClassifierSpec) -> float:
    """Peak amplitude in the target band over the median of the baseline band."""
    f, amp = spec.freqs, spec.amplitude
    band = np.abs(f - cspec.target_hz) <= cspec.band_halfwidth_hz + 1e-9
    lo, hi = cspec.baseline_band
    base = (f >= lo - 1e-9) & (f <= hi + 1e-9)
    peak = float(np.max(amp[band]))
    floor = float(np.median(amp[base]))
    if peak <= 0:
        return 0.0
    if floor <= 0:
        return math.inf
    return peak / floor


def classify(seg: EngineSegment, cspec: ClassifierSpec = ClassifierSpec()) -> EngineState:
    ratio = harmonic_ratio(segment_spectrum(seg), cspec)
    return EngineState.ON if ratio > cspec.threshold else EngineState.OFF


def evaluate_classifier(segments: Sequence[EngineSegment], cspec: ClassifierSpec = ClassifierSpec()):
    """``(tpr, ppv)`` of :func:`classify` against the segment labels."""
    labelled = [s for s in segments if s.label is not None]
    truth = np.array([s.label is EngineState.ON for s in labelled])
    pred = np.array([classify(s, cspec) is EngineState.ON for s in labelled])
    tp = int(np.sum(truth & pred))
    if not truth.any():
        raise NoPositives("no segment is labelled 'on'; TPR undefined")
    if not pred.any():
        raise NoPredictedPositives("classifier predicted no 'on' segment; PPV undefined")
    return tp / int(truth.sum()), tp / int(pred.sum())


def calibrate_threshold(segments: Sequence[EngineSegment], cspec: ClassifierSpec = ClassifierSpec()) -> float:
    """Threshold separating labelled ratios with the best balanced accuracy.

    Candidates are geometric midpoints between consecutive sorted ratios; ties
    go to the larger margin from the nearest ratio on either side.
    """
    labelled = [s for s in segments if s.label is not None]
    ratios = np.array([harmonic_ratio(segment_spectrum(s), cspec) for s in labelled])
    on = np.array([s.label is EngineState.ON for s in labelled])
    if not on.any() or on.all():
        raise NoPositives("calibration needs both 'on' and 'off' labels")
    finite = np.sort(np.unique(ratios[np.isfinite(ratios) & (ratios > 0)]))
    if finite.size < 2:
        return cspec.threshold
    candidates = np.sqrt(finite[:-1] * finite[1:])
    best, best_key = cspec.threshold, None
    for c in candidates:
        pred = ratios > c
        tpr = np.mean(pred[on])
        tnr = np.mean(~pred[~on])
        margin = np.min(np.abs(np.log(finite / c)))
        key = (tpr + tnr, margin)
        if best_key is None or key > best_key:
            best, best_key = float(c), key
    return best


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

LABEL_HEADER = "start_s,end_s,label"


def write_labels_csv(path, labels) -> None:
    lines = [LABEL_HEADER] + [f"{float(s)!r},{float(e)!r},{EngineState(l).value}" for s, e, l in labels]
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels_csv(path) -> list[tuple[float, float, EngineState]]:
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise InputError(f"{p}: cannot read ({exc.strerror or exc})") from exc
    if not lines or lines[0].strip() != LABEL_HEADER:
        raise InputError(f"{p}:1: expected header {LABEL_HEADER!r}")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            start, end, label = float(parts[0]), float(parts[1]), EngineState(parts[2].strip())
        except (IndexError, ValueError):
            raise InputError(f"{p}:{lineno}: malformed label row {line!r}") from None
        out.append((start, end, label))
    return out


def write_spectrum_csv(path, spec: SpectrumSummary) -> None:
    lines = ["freq_hz,amplitude"] + [f"{f!r},{a!r}" for f, a in zip(spec.freqs.tolist(), spec.amplitude.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")
