"""Parameter identification for the VT-MICRO, PB and NN estimators."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InputError, InsufficientData, NonFiniteLoss, RankDeficient
from .estimators import (
    VT_DEGREE,
    NnParams,
    Params,
    PbParams,
    VtMicroParams,
    nn_predict,
    param_lines,
    pb_predict,
    vt_micro_predict,
)
from .lbfgs import minimize_lbfgs
from .signal_pipeline import SyncedDataset

# Fuel-flow readings at or below this are treated as "no fuel" (half the
# 0.001 l/h CAN resolution). Low-pass tails leave tiny positive values in
# cut-off stretches that must not enter the positive-flow fits.
DEFAULT_F_EPS_LH = 0.0005
# The filtered flow next to a cut-off is a blend of both sides for a few
# tenths of a second; such samples are kept out of the positive-flow fits.
DEFAULT_ZERO_GUARD_S = 0.5
DEFAULT_RESTARTS = 20
DEFAULT_HIDDEN = 9
NN_MAX_ITER = 500
NN_GTOL = 1e-6


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.75
    seed: int = 0
    by_trip: bool = False
    trip_gap_s: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise InputError("train_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class FitReport:
    params: Params
    train_mse: float
    test_mse: float  # nan when there is no test data
    n_train: int
    n_test: int
    n_excluded: int
    restarts_run: Optional[int] = None
    condition_estimate: Optional[float] = None

    @property
    def kind(self) -> str:
        return self.params.kind

    def dumps(self) -> str:
        lines = [
            f"model_kind: {self.kind}",
            f"train_mse = {self.train_mse!r}",
            f"test_mse = {self.test_mse!r}",
            f"n_train = {self.n_train}",
            f"n_test = {self.n_test}",
            f"n_excluded = {self.n_excluded}",
        ]
        if self.restarts_run is not None:
            lines.append(f"restarts_run = {self.restarts_run}")
        if self.condition_estimate is not None:
            lines.append(f"condition_estimate = {self.condition_estimate!r}")
        return "\n".join(lines + param_lines(self.params)) + "\n"


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------


def _trip_bounds(t: np.ndarray, gap_s: float) -> list[tuple[int, int]]:
    cuts = np.flatnonzero(np.diff(t) > gap_s) + 1
    edges = [0, *cuts.tolist(), t.size]
    return list(zip(edges[:-1], edges[1:]))


def split(ds: SyncedDataset, spec: SplitSpec = SplitSpec()):
    """Seeded random partition into ``(train, test)``; both keep time order.

    Record-wise by default. With ``spec.by_trip`` whole trips (runs without a
    timestamp gap larger than ``trip_gap_s``) are assigned, in random order,
    to the training side until it holds the target share of records.
    """
    n = len(ds)
    if n == 0:
        raise InsufficientData("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    n_train = int(round(spec.train_fraction * n))
    if spec.by_trip:
        trips = _trip_bounds(ds.t, spec.trip_gap_s)
        mask = np.zeros(n, dtype=bool)
        count = 0
        for k in rng.permutation(len(trips)):
            if count >= n_train:
                break
            lo, hi = trips[k]
            mask[lo:hi] = True
            count += hi - lo
    else:
        mask = np.zeros(n, dtype=bool)
        mask[rng.permutation(n)[:n_train]] = True
    return ds.subset(mask), ds.subset(~mask)


# --------------------------------------------------------------------------
# linear least squares
# --------------------------------------------------------------------------


def lstsq_qr(X: np.ndarray, y: np.ndarray):
    """Least-squares solution via Householder QR of the column-equilibrated matrix.

    Returns ``(beta, cond)`` where ``cond`` is the 2-norm condition number of
    the equilibrated design. Raises RankDeficient when a column vanishes or
    the numerical rank is short.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < p:
        raise InsufficientData(f"{n} rows cannot determine {p} coefficients")
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise RankDeficient(f"design columns {np.flatnonzero(norms == 0).tolist()} are all zero")
    Q, R = np.linalg.qr(X / norms)
    sv = np.linalg.svd(R, compute_uv=False)
    tol = sv[0] * max(n, p) * np.finfo(float).eps
    rank = int(np.sum(sv > tol))
    if rank < p:
        raise RankDeficient(f"design matrix rank {rank} < {p}")
    beta = solve_triangular(R, Q.T @ y) / norms
    return beta, float(sv[0] / sv[-1])


def positive_flow_mask(ds: SyncedDataset, f_eps: float = DEFAULT_F_EPS_LH,
                       zero_guard_s: float = DEFAULT_ZERO_GUARD_S) -> np.ndarray:
    """Rows with ``f > f_eps`` lying more than ``zero_guard_s`` from any row with ``f <= f_eps``."""
    keep = ds.f > f_eps
    zero_t = ds.t[~keep]
    if zero_guard_s <= 0 or zero_t.size == 0:
        return keep
    i = np.searchsorted(zero_t, ds.t)
    before = ds.t - zero_t[np.clip(i - 1, 0, zero_t.size - 1)]
    after = zero_t[np.clip(i, 0, zero_t.size - 1)] - ds.t
    near = np.minimum(np.abs(before), np.abs(after)) <= zero_guard_s
    return keep & ~near


def _mse(pred, truth) -> float:
    if len(truth) == 0:
        return math.nan
    r = np.asarray(pred) - np.asarray(truth)
    return float(np.mean(r * r))


def vt_design(v, a) -> np.ndarray:
    """Columns ``v^i a^j`` ordered ``(i, j) = (0,0), (0,1), ..., (3,3)``."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    return np.column_stack([v**i * a**j for i in range(VT_DEGREE) for j in range(VT_DEGREE)])


def pb_design(v, a) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    return np.column_stack([a * v, v, v**2, v**3])


def fit_vt_micro(
    train: SyncedDataset,
    test: SyncedDataset | None = None,
    f_eps: float = DEFAULT_F_EPS_LH,
    zero_guard_s: float = DEFAULT_ZERO_GUARD_S,
) -> FitReport:
    """Two independent log-domain least-squares fits, split on the sign of ``a``.

    Rows failing :func:`positive_flow_mask` carry no usable log target and are
    dropped from both ``train`` and ``test``; ``a == 0`` belongs to the L branch.
    """
    test = test if test is not None else SyncedDataset.empty()
    used = train.subset(positive_flow_mask(train, f_eps, zero_guard_s))
    used_test = test.subset(positive_flow_mask(test, f_eps, zero_guard_s))
    n_coef = VT_DEGREE * VT_DEGREE

    coefs = {}
    conds = []
    for name, mask in (("L", used.a >= 0), ("M", used.a < 0)):
        v, a, f = used.v[mask], used.a[mask], used.f[mask]
        distinct = len(set(zip(v.tolist(), a.tolist())))
        if v.size < n_coef or distinct < n_coef:
            raise InsufficientData(
                f"VT-MICRO {name} branch needs {n_coef} distinct (v, a) samples with f > {f_eps}, "
                f"has {v.size} samples / {distinct} distinct"
            )
        try:
            beta, cond = lstsq_qr(vt_design(v, a), np.log(f))
        except RankDeficient as exc:
            raise RankDeficient(f"VT-MICRO {name} branch: {exc}") from None
        coefs[name] = beta.reshape(VT_DEGREE, VT_DEGREE)
        conds.append(cond)

    params = VtMicroParams(coefs["L"], coefs["M"])
    return FitReport(
        params=params,
        train_mse=_mse(vt_micro_predict(params, used.v, used.a), used.f),
        test_mse=_mse(vt_micro_predict(params, used_test.v, used_test.a), used_test.f),
        n_train=len(used),
        n_test=len(used_test),
        n_excluded=(len(train) - len(used)) + (len(test) - len(used_test)),
        condition_estimate=max(conds),
    )


def fit_pb(
    train: SyncedDataset,
    test: SyncedDataset | None = None,
    f_eps: float = DEFAULT_F_EPS_LH,
    zero_guard_s: float = DEFAULT_ZERO_GUARD_S,
) -> FitReport:
    """Ordinary least squares of ``f`` on ``(a*v, v, v^2, v^3)`` over positive-flow rows."""
    test = test if test is not None else SyncedDataset.empty()
    used = train.subset(positive_flow_mask(train, f_eps, zero_guard_s))
    used_test = test.subset(positive_flow_mask(test, f_eps, zero_guard_s))
    if len(used) < 4:
        raise InsufficientData(f"PB needs 4 samples with f > {f_eps}, has {len(used)}")
    try:
        alpha, cond = lstsq_qr(pb_design(used.v, used.a), used.f)
    except RankDeficient as exc:
        raise RankDeficient(f"PB: {exc}") from None
    params = PbParams(alpha)
    return FitReport(
        params=params,
        train_mse=_mse(pb_predict(params, used.v, used.a), used.f),
        test_mse=_mse(pb_predict(params, used_test.v, used_test.a), used_test.f),
        n_train=len(used),
        n_test=len(used_test),
        n_excluded=(len(train) - len(used)) + (len(test) - len(used_test)),
        condition_estimate=cond,
    )


# --------------------------------------------------------------------------
# neural network
# --------------------------------------------------------------------------


def pack(W1, b1, W2, b2) -> np.ndarray:
    return np.concatenate([np.ravel(W1), np.ravel(b1), np.ravel(W2), [float(b2)]])


def unpack(theta: np.ndarray, hidden: int):
    h = hidden
    W1 = theta[: 2 * h].reshape(h, 2)
    b1 = theta[2 * h : 3 * h]
    w2 = theta[3 * h : 4 * h]
    return W1, b1, w2, theta[4 * h]


def nn_loss_grad(theta: np.ndarray, Z: np.ndarray, f: np.ndarray, hidden: int):
    """Mean squared error of the unclamped network on standardized inputs ``Z``, and its gradient."""
    W1, b1, w2, b2 = unpack(theta, hidden)
    H = np.tanh(Z @ W1.T + b1)
    r = H @ w2 + b2 - f
    loss = float(r @ r) / r.size
    dy = (2.0 / r.size) * r
    dpre = np.outer(dy, w2) * (1.0 - H * H)
    grad = pack(dpre.T @ Z, dpre.sum(axis=0), H.T @ dy, dy.sum())
    return loss, grad


def input_stats(v, a):
    X = np.column_stack([v, a])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0  # constant input: leave it centred, unscaled
    return mean, std


def init_theta(hidden: int, rng: np.random.Generator) -> np.ndarray:
    W1 = rng.uniform(-1 / math.sqrt(2), 1 / math.sqrt(2), size=(hidden, 2))
    W2 = rng.uniform(-1 / math.sqrt(hidden), 1 / math.sqrt(hidden), size=hidden)
    return pack(W1, np.zeros(hidden), W2, 0.0)


def _one_restart(Z, f, hidden, seed, index, max_iter):
    rng = np.random.default_rng([seed, index])
    try:
        res = minimize_lbfgs(
            lambda th: nn_loss_grad(th, Z, f, hidden),
            init_theta(hidden, rng),
            max_iter=max_iter,
            gtol=NN_GTOL,
        )
    except NonFiniteLoss:
        return None
    return res


def fit_nn(
    train: SyncedDataset,
    test: SyncedDataset | None = None,
    hidden: int = DEFAULT_HIDDEN,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    max_iter: int = NN_MAX_ITER,
    workers: int = 1,
) -> FitReport:
    """Multi-restart L-BFGS training of the 2-``hidden``-1 network.

    Inputs are standardized with training-split statistics. The restart with
    the lowest training objective wins; ties go to the lower restart index, so
    the outcome does not depend on ``workers``. Reported MSEs are those of the
    deployed (zero-clamped) predictor.
    """
    test = test if test is not None else SyncedDataset.empty()
    if len(train) == 0:
        raise InsufficientData("NN training set is empty")
    if hidden < 1 or restarts < 1:
        raise InputError("hidden and restarts must both be at least 1")

    mean, std = input_stats(train.v, train.a)
    Z = (np.column_stack([train.v, train.a]) - mean) / std
    f = np.asarray(train.f, dtype=float)

    jobs = range(restarts)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda k: _one_restart(Z, f, hidden, seed, k, max_iter), jobs))
    else:
        results = [_one_restart(Z, f, hidden, seed, k, max_iter) for k in jobs]

    finished = [(r.fun, k, r) for k, r in enumerate(results) if r is not None and np.isfinite(r.fun)]
    if not finished:
        raise NonFiniteLoss(f"all {restarts} NN restarts produced a non-finite loss")
    _, _, best = min(finished, key=lambda item: (item[0], item[1]))

    W1, b1, w2, b2 = unpack(best.x, hidden)
    params = NnParams(mean, std, W1, b1, w2.reshape(1, -1), b2, hidden)
    return FitReport(
        params=params,
        train_mse=_mse(nn_predict(params, train.v, train.a), train.f),
        test_mse=_mse(nn_predict(params, test.v, test.a), test.f),
        n_train=len(train),
        n_test=len(test),
        n_excluded=0,
        restarts_run=len(finished),
    )


def sweep_hidden(
    ds: SyncedDataset,
    sizes: Sequence[int],
    spec: SplitSpec = SplitSpec(),
    restarts: int = DEFAULT_RESTARTS,
    workers: int = 1,
):
    """Fit one network per hidden size on a single shared split.

    Returns ``(best_size, reports)``; the best size minimizes test MSE, ties
    going to the smaller size.
    """
    if not sizes:
        raise InputError("sizes must be non-empty")
    train, test = split(ds, spec)
    reports = [fit_nn(train, test, h, restarts, spec.seed, workers=workers) for h in sizes]
    best = min(zip(sizes, reports), key=lambda sr: (sr[1].test_mse, sr[0]))[0]
    return best, reports
