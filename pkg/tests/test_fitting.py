from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import dataset, network_dataset, planted_network
from gnssfuel.errors import InputError, InsufficientData, NonFiniteLoss, RankDeficient
from gnssfuel.estimators import PbParams, VtMicroParams, nn_predict, pb_predict, vt_micro_predict
from gnssfuel.fitting import (
    SplitSpec,
    fit_nn,
    fit_pb,
    fit_vt_micro,
    input_stats,
    lstsq_qr,
    nn_loss_grad,
    pb_design,
    positive_flow_mask,
    split,
    sweep_hidden,
    vt_design,
)
from gnssfuel.lbfgs import minimize_lbfgs


def normal_equations(X, y):
    """Independent oracle: the Gramian system solved exactly in rational arithmetic.

    A floating-point Gramian squares the condition number (about 1e5 for the
    cubic designs here), which would make the oracle itself the weakest link.
    """
    A = [[Fraction(float(x)) for x in row] for row in X]
    b = [Fraction(float(x)) for x in y]
    n, p = len(A), len(A[0])
    G = [[sum(A[k][i] * A[k][j] for k in range(n)) for j in range(p)] for i in range(p)]
    r = [sum(A[k][i] * b[k] for k in range(n)) for i in range(p)]
    for c in range(p):
        piv = next(i for i in range(c, p) if G[i][c] != 0)
        G[c], G[piv] = G[piv], G[c]
        r[c], r[piv] = r[piv], r[c]
        for i in range(c + 1, p):
            m = G[i][c] / G[c][c]
            if m:
                for j in range(c, p):
                    G[i][j] -= m * G[c][j]
                r[i] -= m * r[c]
    x = [Fraction(0)] * p
    for i in reversed(range(p)):
        x[i] = (r[i] - sum(G[i][j] * x[j] for j in range(i + 1, p))) / G[i][i]
    return np.array([float(val) for val in x])


def assert_close_vec(got, want, rel):
    assert np.max(np.abs(got - want)) <= rel * np.max(np.abs(want))


def grid(v_range=(1, 35), a_range=(-3, 3), nv=25, na=25):
    V, A = np.meshgrid(np.linspace(*v_range, nv), np.linspace(*a_range, na), indexing="ij")
    return V.ravel(), A.ravel()


# --- split ----------------------------------------------------------------


def test_split_exact_fraction():
    ds = dataset(np.arange(1, 101.0), np.zeros(100), np.ones(100))
    train, test = split(ds, SplitSpec(0.75, seed=3))
    assert (len(train), len(test)) == (75, 25)


def test_split_deterministic():
    ds = dataset(np.arange(1, 101.0), np.zeros(100), np.ones(100))
    a = split(ds, SplitSpec(seed=9))
    b = split(ds, SplitSpec(seed=9))
    np.testing.assert_array_equal(a[0].t, b[0].t)
    assert not np.array_equal(a[0].t, split(ds, SplitSpec(seed=10))[0].t)


@given(st.integers(2, 200), st.integers(0, 2**31), st.booleans())
def test_split_is_partition(n, seed, by_trip):
    t = np.arange(n) * 0.1 + np.repeat(np.arange(0, n, 7), 7)[:n] * 10.0  # gaps make trips
    ds = dataset(np.arange(1.0, n + 1), np.zeros(n), np.ones(n))
    ds = type(ds)(t, ds.v, ds.a, ds.f)
    train, test = split(ds, SplitSpec(seed=seed, by_trip=by_trip))
    merged = np.sort(np.concatenate([train.t, test.t]))
    np.testing.assert_array_equal(merged, ds.t)
    assert np.all(np.diff(train.t) > 0) and np.all(np.diff(test.t) > 0)


def test_split_by_trip_keeps_trips_whole():
    t = np.concatenate([np.arange(50) * 0.1 + 100.0 * k for k in range(8)])
    n = t.size
    ds = dataset(np.ones(n), np.zeros(n), np.ones(n))
    ds = type(ds)(t, ds.v, ds.a, ds.f)
    train, _ = split(ds, SplitSpec(seed=1, by_trip=True))
    trips = np.unique(np.floor(train.t / 100.0))
    assert len(train) == 50 * trips.size


def test_split_rejects_bad_fraction():
    with pytest.raises(InputError):
        SplitSpec(1.0)


# --- least squares --------------------------------------------------------


@pytest.mark.parametrize("seed", range(25))
def test_pb_equals_normal_equations(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(10, 51))
    v, a = r.uniform(1, 35, n), r.uniform(-3, 3, n)
    f = r.uniform(0.1, 8, n)
    rep = fit_pb(dataset(v, a, f))
    assert_close_vec(rep.params.alpha, normal_equations(pb_design(v, a), f), 1e-8)


@pytest.mark.parametrize("seed", range(25))
def test_vt_equals_normal_equations(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(16, 26))
    v = r.uniform(1, 35, 2 * n)
    a = np.concatenate([r.uniform(0, 3, n), r.uniform(-3, -0.01, n)])
    f = r.uniform(0.2, 5, 2 * n)
    rep = fit_vt_micro(dataset(v, a, f))
    for C, sel in ((rep.params.L, a >= 0), (rep.params.M, a < 0)):
        oracle = normal_equations(vt_design(v[sel], a[sel]), np.log(f[sel]))
        assert_close_vec(C.ravel(), oracle, 1e-8)


def test_ten_row_pb_instance():
    r = np.random.default_rng(77)
    v, a, f = r.uniform(5, 30, 10), r.uniform(-1, 1, 10), r.uniform(0.5, 4, 10)
    rep = fit_pb(dataset(v, a, f))
    assert_close_vec(rep.params.alpha, normal_equations(pb_design(v, a), f), 1e-8)


def test_lstsq_zero_column():
    X = np.column_stack([np.ones(5), np.zeros(5)])
    with pytest.raises(RankDeficient):
        lstsq_qr(X, np.ones(5))


def test_lstsq_collinear():
    x = np.arange(6.0)
    with pytest.raises(RankDeficient):
        lstsq_qr(np.column_stack([x, 2 * x]), np.ones(6))


def test_lstsq_underdetermined():
    with pytest.raises(InsufficientData):
        lstsq_qr(np.ones((2, 3)), np.ones(2))


# --- planted recovery -----------------------------------------------------


def planted_vt(seed=5):
    r = np.random.default_rng(seed)
    shrink = np.outer(35.0 ** -np.arange(4), 3.0 ** -np.arange(4))
    return VtMicroParams(r.normal(0, 0.5, (4, 4)) * shrink, r.normal(0, 0.5, (4, 4)) * shrink)


def test_vt_recovers_planted_coefficients():
    p = planted_vt()
    v, a = grid()
    f = vt_micro_predict(p, v, a)
    rep = fit_vt_micro(dataset(v, a, f))
    for got, want in ((rep.params.L, p.L), (rep.params.M, p.M)):
        np.testing.assert_allclose(got, want, rtol=1e-6)
    np.testing.assert_allclose(vt_micro_predict(rep.params, v, a), f, rtol=1e-8)
    assert rep.n_excluded == 0 and rep.condition_estimate > 1


def test_vt_all_zero_fuel():
    v, a = grid()
    with pytest.raises(InsufficientData):
        fit_vt_micro(dataset(v, a, np.zeros(v.size)))


def test_vt_needs_both_branches():
    v, a = grid(a_range=(0, 3))
    with pytest.raises(InsufficientData, match="M branch"):
        fit_vt_micro(dataset(v, a, np.ones(v.size)))


def test_pb_recovers_planted_coefficients():
    alpha = np.array([0.012, 0.08, 0.004, 0.0007])
    v, a = grid()
    f = pb_predict(PbParams(alpha), v, a)
    assert np.all(f > 0)
    rep = fit_pb(dataset(v, a, f))
    np.testing.assert_allclose(rep.params.alpha, alpha, rtol=1e-8)
    assert rep.train_mse < 1e-20


def test_pb_at_standstill_is_rank_deficient():
    with pytest.raises(RankDeficient):
        fit_pb(dataset(np.zeros(30), np.linspace(-1, 1, 30), np.ones(30)))


def test_pb_reports_test_side():
    alpha = np.array([0.012, 0.08, 0.004, 0.0007])
    v, a = grid()
    ds = dataset(v, a, pb_predict(PbParams(alpha), v, a))
    train, test = split(ds, SplitSpec(seed=2))
    rep = fit_pb(train, test)
    assert rep.n_train == len(train) and rep.n_test == len(test)
    assert rep.test_mse < 1e-20


def test_positive_flow_guard():
    f = np.array([1, 1, 1, 0, 1, 1, 1, 1, 1, 1.0])
    ds = dataset(np.ones(10), np.zeros(10), f)
    np.testing.assert_array_equal(
        positive_flow_mask(ds, zero_guard_s=0.15),
        [True, True, False, False, False, True, True, True, True, True],
    )
    np.testing.assert_array_equal(positive_flow_mask(ds, zero_guard_s=0), f > 0)


# --- neural network -------------------------------------------------------


def _fd_grad(fun, theta, h=1e-6):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return g


@pytest.mark.parametrize("point", range(10))
def test_backprop_matches_finite_differences(point):
    r = np.random.default_rng(point)
    hidden = 9
    Z = r.normal(size=(40, 2))
    f = r.uniform(0, 5, 40)
    theta = r.normal(size=4 * hidden + 1)
    _, g = nn_loss_grad(theta, Z, f, hidden)
    fd = _fd_grad(lambda th: nn_loss_grad(th, Z, f, hidden)[0], theta)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-5


def test_planted_network_recovered():
    ds = network_dataset(planted_network())
    train, test = split(ds, SplitSpec(seed=3))
    rep = fit_nn(train, test, hidden=9, restarts=5, seed=7)
    assert rep.test_mse <= 1e-4
    assert rep.restarts_run == 5


def test_constant_records_fit_exactly():
    ds = dataset(np.full(30, 42.0), np.full(30, 0.3), np.full(30, 2.5))
    rep = fit_nn(ds, hidden=3, restarts=2, seed=0)
    np.testing.assert_array_equal(rep.params.input_std, [1.0, 1.0])
    assert rep.train_mse == pytest.approx(0.0, abs=1e-14)
    assert nn_predict(rep.params, 42.0, 0.3) == pytest.approx(2.5, abs=1e-7)


def test_nn_same_seed_same_report():
    ds = network_dataset(planted_network(seed=1, hidden=3), n=300)
    a = fit_nn(ds, hidden=3, restarts=3, seed=11)
    b = fit_nn(ds, hidden=3, restarts=3, seed=11, workers=3)
    assert a.dumps() == b.dumps()


def test_nn_rejects_empty_and_bad_sizes():
    with pytest.raises(InsufficientData):
        fit_nn(dataset([], [], []))
    with pytest.raises(InputError):
        fit_nn(dataset([1.0], [0.0], [1.0]), hidden=0)


def test_input_stats_constant_column():
    mean, std = input_stats([1.0, 2.0, 3.0], [0.5, 0.5, 0.5])
    assert mean[1] == 0.5 and std[1] == 1.0


def test_sweep_singleton():
    ds = network_dataset(planted_network(seed=2, hidden=3), n=200)
    best, reports = sweep_hidden(ds, [9], restarts=1)
    assert best == 9 and len(reports) == 1


def test_sweep_prefers_enough_capacity():
    ds = network_dataset(planted_network(seed=4, hidden=3, scale=1.0), n=800)
    best, reports = sweep_hidden(ds, [1, 3, 9], SplitSpec(seed=5), restarts=3)
    assert best in (3, 9)
    assert reports[0].test_mse > max(reports[1].test_mse, reports[2].test_mse)


# --- optimizer ------------------------------------------------------------


def test_lbfgs_rosenbrock():
    def fg(x):
        f = 100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2
        g = np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])
        return f, g

    res = minimize_lbfgs(fg, np.array([-1.2, 1.0]))
    assert res.converged
    np.testing.assert_allclose(res.x, [1, 1], atol=1e-5)


def test_lbfgs_nonfinite_start():
    with pytest.raises(NonFiniteLoss):
        minimize_lbfgs(lambda x: (np.nan, np.zeros_like(x)), np.zeros(2))
