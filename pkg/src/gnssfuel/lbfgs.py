"""Limited-memory BFGS with a strong-Wolfe line search.

Written out here rather than delegated to ``scipy.optimize.minimize`` because
the stopping rule is relative to the loss (``|g|_inf < gtol * (1 + |f|)``),
which scipy's L-BFGS-B cannot express. The line search itself is scipy's.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import line_search

from .errors import NonFiniteLoss

FunGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iter: int
    converged: bool
    message: str


class _Cache:
    """Memoizes the last evaluation so the line search can ask for f and g separately."""

    def __init__(self, fun_grad: FunGrad):
        self.fun_grad = fun_grad
        self.key = None
        self.value = None
        self.n_eval = 0

    def __call__(self, x):
        key = x.tobytes()
        if key != self.key:
            f, g = self.fun_grad(x)
            self.n_eval += 1
            if not np.isfinite(f):
                f = np.inf
            self.key, self.value = key, (float(f), g)
        return self.value

    def f(self, x):
        return self(x)[0]

    def g(self, x):
        return self(x)[1]


def _search(cache, x, d, g, f, f_prev):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return line_search(cache.f, cache.g, x, d, gfk=g, old_fval=f, old_old_fval=f_prev)[0]


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        alpha = rho * (s @ q)
        q -= alpha * y
        alphas.append((rho, alpha))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, alpha) in zip(zip(s_hist, y_hist), reversed(alphas)):
        beta = rho * (y @ q)
        q += (alpha - beta) * s
    return -q


def minimize_lbfgs(
    fun_grad: FunGrad,
    x0,
    *,
    memory: int = 20,
    max_iter: int = 500,
    gtol: float = 1e-6,
) -> LbfgsResult:
    """Minimize ``fun_grad(x) -> (f, grad)`` from ``x0``.

    Stops when ``max|grad| < gtol * (1 + |f|)`` or after ``max_iter`` iterations.
    Raises NonFiniteLoss if the objective is not finite at the start point.
    """
    cache = _Cache(fun_grad)
    x = np.array(x0, dtype=float)
    f, g = cache(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise NonFiniteLoss("objective is not finite at the initial point")

    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)
    f_prev = f + 0.5 * np.linalg.norm(g)
    message = "iteration limit reached"
    converged = False
    it = 0
    while True:
        if np.max(np.abs(g)) < gtol * (1.0 + abs(f)):
            converged, message = True, "gradient below tolerance"
            break
        if it >= max_iter:
            break
        d = _two_loop(g, s_hist, y_hist)
        if not g @ d < 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
        step = _search(cache, x, d, g, f, f_prev)
        if step is None and s_hist:
            # curvature information went stale; restart from steepest descent
            s_hist.clear()
            y_hist.clear()
            d = -g
            step = _search(cache, x, d, g, f, f_prev)
        if step is None:
            message = "line search failed"
            break
        x_new = x + step * d
        f_new, g_new = cache(x_new)
        if not np.isfinite(f_new):
            raise NonFiniteLoss("objective became non-finite during optimization")
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
        f_prev, x, f, g = f, x_new, f_new, g_new
        it += 1
    return LbfgsResult(x, f, g, it, converged, message)
