import numpy as np
import pytest

from gnssfuel.engine import ClassifierSpec, EngineState, classify, extract_segments
from gnssfuel.errors import InputError
from gnssfuel.estimators import PbParams, pb_predict
from gnssfuel.metrics import integral_fuel
from gnssfuel.synth import DEFAULT_PB_ALPHA, KMH, Profile, TripSpec, generate_trip, speed_profile


def _same(a, b):
    for x, y in zip(a[:3], b[:3]):
        assert x.start_time == y.start_time and np.array_equal(x.values, y.values)
    for col in ("t", "v", "a", "f"):
        assert np.array_equal(getattr(a.truth, col), getattr(b.truth, col))
    assert a.labels == b.labels


@pytest.mark.parametrize("profile", list(Profile))
def test_same_seed_same_trip(profile):
    spec = TripSpec(profile=profile, duration_s=300, seed=17)
    _same(generate_trip(spec), generate_trip(spec))


def test_different_seed_different_trip():
    a = generate_trip(TripSpec(duration_s=300, seed=1))
    b = generate_trip(TripSpec(duration_s=300, seed=2))
    assert not np.array_equal(a.v_raw.values, b.v_raw.values)


def test_native_rates_and_lengths():
    trip = generate_trip(TripSpec(duration_s=60))
    assert (trip.v_raw.rate_hz, trip.a_raw.rate_hz, trip.f_raw.rate_hz) == (10.0, 100.0, 20.0)
    assert (len(trip.v_raw), len(trip.a_raw), len(trip.f_raw)) == (601, 6001, 1201)
    assert len(trip.truth) == 601


def test_constant_speed_steady_state():
    spec = TripSpec.noiseless(profile="highway_cruise", speed_variation_kmh=0.0, grade_pct=0.0, duration_s=600)
    truth = generate_trip(spec).truth
    assert np.all(truth.v == spec.cruise_kmh)
    assert np.max(np.abs(truth.a)) < 1e-12
    expected = pb_predict(spec.planted_model, spec.cruise_kmh, 0.0)
    np.testing.assert_allclose(truth.f, expected, rtol=1e-14)


def test_constant_speed_integral_matches_closed_form():
    spec = TripSpec.noiseless(profile="highway_cruise", speed_variation_kmh=0.0, grade_pct=0.0, duration_s=900)
    truth = generate_trip(spec).truth
    closed = pb_predict(spec.planted_model, spec.cruise_kmh, 0.0) * 900 / 3600
    assert integral_fuel(truth.f, truth.t) == pytest.approx(closed, abs=1e-9)


@pytest.mark.parametrize("profile", list(Profile))
def test_speed_derivative_is_acceleration(profile):
    # central differences on the 100 Hz grid: truncation error h^2/6 * jerk ~ 1e-5
    spec = TripSpec.noiseless(profile=profile, grade_pct=0.0, duration_s=900, seed=3, engine_tone=None)
    trip = generate_trip(spec)
    t = trip.a_raw.timestamps
    v = speed_profile(spec).speed(t) / KMH
    dv = (v[2:] - v[:-2]) / (t[2:] - t[:-2])
    assert np.max(np.abs(dv - trip.a_raw.values[1:-1])) < 1e-3


def test_analytic_distance_integrates_speed():
    prof = speed_profile(TripSpec(duration_s=600, seed=2))
    t = np.linspace(0, 600, 600001)
    v = prof.speed(t) / KMH
    trapz = np.concatenate([[0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))])
    np.testing.assert_allclose(prof.distance(t), trapz, atol=1e-3)


def test_default_trip_has_stops_and_labels():
    trip = generate_trip(TripSpec())
    assert len(trip.labels) > 0
    for start, end, state in trip.labels:
        assert end > start and state in (EngineState.ON, EngineState.OFF)
        inside = (trip.truth.t >= start) & (trip.truth.t < end)
        assert np.all(trip.truth.v[inside] == 0)


def test_stop_fuel_follows_engine_state():
    spec = TripSpec.noiseless(idle_flow_lh=0.8, seed=5)
    trip = generate_trip(spec)
    t, f = trip.truth.t, trip.truth.f
    for start, end, state in trip.labels:
        inside = (t >= start) & (t < end)
        assert np.all(f[inside] == (0.8 if state is EngineState.ON else 0.0))


def test_readings_are_quantized_and_exactly_zero_at_rest():
    trip = generate_trip(TripSpec(seed=6))
    for s, q in ((trip.v_raw, 0.01), (trip.a_raw, 0.001), (trip.f_raw, 0.001)):
        steps = s.values / q
        np.testing.assert_allclose(steps, np.round(steps), atol=1e-6)
    stopped = trip.truth.v == 0
    assert np.all(trip.v_raw.values[stopped] == 0.0)
    assert np.all(trip.v_raw.values >= 0) and np.all(trip.f_raw.values >= 0)


def test_noise_level_matches_resolution():
    trip = generate_trip(TripSpec(profile="highway_cruise", seed=7, duration_s=600))
    resid = trip.v_raw.values - trip.truth.v
    assert np.std(resid) == pytest.approx(np.hypot(0.01, 0.01 / np.sqrt(12)), rel=0.1)


def test_engine_tone_stops_classified_on():
    trip = generate_trip(TripSpec(seed=8))
    segs = extract_segments(trip.v_raw, trip.a_raw, trip.labels)
    assert segs
    for seg in segs:
        if seg.label is EngineState.ON:
            assert classify(seg, ClassifierSpec()) is EngineState.ON


def test_invalid_trip_parameters():
    with pytest.raises(InputError):
        TripSpec(duration_s=0)
    with pytest.raises(InputError):
        TripSpec(engine_on_probability=1.5)


def test_default_planted_model():
    assert np.array_equal(TripSpec().planted_model.alpha, PbParams(DEFAULT_PB_ALPHA).alpha)


@pytest.mark.parametrize("profile", ["urban_stop_go", "mixed_ramp"])
def test_stops_are_maximal_standstill_runs(profile):
    trip = generate_trip(TripSpec.noiseless(profile=profile, duration_s=900, seed=11))
    t, v = trip.truth.t, trip.truth.v
    starts = [s for s, _, _ in trip.labels]
    ends = [e for _, e, _ in trip.labels]
    assert all(a < b for a, b in zip(ends, starts[1:]))
    for start, end, _ in trip.labels:
        # moving immediately before and after each labelled stop (unless at the record edge)
        before = t[(t < start) & (t > start - 0.15)]
        after = t[(t > end) & (t < end + 0.15)]
        assert all(v[np.isin(t, before)] > 0) and all(v[np.isin(t, after)] > 0)
