import numpy as np
import pytest

from gnssfuel.estimators import NnParams
from gnssfuel.signal_pipeline import Quantity, SensorSeries, SyncedDataset


def series(values, rate=10.0, quantity=Quantity.VELOCITY, start=0.0):
    return SensorSeries(start, rate, np.asarray(values, dtype=float), quantity)


def dataset(v, a, f, dt=0.1, t0=0.0):
    v = np.asarray(v, dtype=float)
    return SyncedDataset(t0 + dt * np.arange(v.size), v, np.asarray(a, float), np.asarray(f, float))


def planted_network(seed=103, hidden=9, scale=0.7):
    """A smooth random 2-h-1 network used as a recovery target."""
    r = np.random.default_rng(seed)
    return NnParams(
        [60.0, 0.0],
        [35.0, 1.7],
        r.normal(0, scale, (hidden, 2)),
        r.normal(0, 0.5, hidden),
        r.normal(0, 1, (1, hidden)),
        0.0,
        hidden,
    )


def network_dataset(planted, n=2000, seed=1):
    """Random (v, a) cloud with the planted network's output shifted to stay positive."""
    from gnssfuel.estimators import nn_raw

    rng = np.random.default_rng(seed)
    v = rng.uniform(0, 130, n)
    a = rng.uniform(-3, 3, n)
    f = nn_raw(planted, v, a)
    return dataset(v, a, f - f.min() + 0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def engine_fixture(n_on=50, n_off=50, ratio=3.0, seed=0, tone_hz=26.6, n_samples=1000):
    """Labelled stop segments: white noise, plus a tone of ``ratio`` noise std in the 'on' ones.

    Segment lengths and tone phases vary so no two segments are alike.
    """
    from gnssfuel.engine import EngineSegment, EngineState

    rng = np.random.default_rng(seed)
    segs = []
    for k in range(n_on + n_off):
        on = k < n_on
        n = int(n_samples * rng.uniform(0.5, 1.5))
        t = np.arange(n) / 100.0
        x = rng.normal(0, 1, n)
        if on:
            x += ratio * np.sin(2 * np.pi * tone_hz * t + rng.uniform(0, 2 * np.pi))
        segs.append(EngineSegment(x, 20.0 * k, 100.0, EngineState.ON if on else EngineState.OFF))
    return segs
