"""Evaluation kernels and persistence for the three fuel-flow estimators.

* VT-MICRO: ``log f = sum_ij C_ij v^i a^j`` with ``C = L`` for ``a >= 0`` and
  ``C = M`` for ``a < 0`` (4x4 coefficients each).
* PB: ``f = max(0, k1*a*v + k2*v + k3*v^2 + k4*v^3)``, the longitudinal power
  balance with mass, drag/rolling terms and the fuel-per-power factor folded
  into four coefficients. ``a`` is the gravity-inclusive IMU reading, so road
  grade enters through it.
* NN: 2-input, one ``tanh`` hidden layer, linear output, clamped at zero for
  inference only.

Velocity is in km/h, acceleration in m/s^2, fuel flow in l/h.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .errors import InputError, ModelFormatError, NumericOverflow

VT_DEGREE = 4  # powers 0..3 in each variable
DEFAULT_LOG_BOUND = 50.0
FORMAT_VERSION = 1


def _frozen(values, shape=None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if shape is not None and arr.shape != shape:
        raise InputError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("parameters must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class VtMicroParams:
    L: np.ndarray  # a >= 0 branch, L[i, j] multiplies v^i a^j
    M: np.ndarray  # a < 0 branch

    def __post_init__(self):
        shape = (VT_DEGREE, VT_DEGREE)
        object.__setattr__(self, "L", _frozen(self.L, shape))
        object.__setattr__(self, "M", _frozen(self.M, shape))

    kind = "vtmicro"


@dataclass(frozen=True, eq=False)
class PbParams:
    alpha: np.ndarray  # coefficients of a*v, v, v^2, v^3

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha, (4,)))

    kind = "pb"


@dataclass(frozen=True, eq=False)
class NnParams:
    input_mean: np.ndarray
    input_std: np.ndarray
    W1: np.ndarray  # (hidden, 2)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (1, hidden)
    b2: float
    hidden_size: int = field(default=0)

    def __post_init__(self):
        W1 = np.asarray(self.W1, dtype=float)
        h = self.hidden_size or W1.shape[0]
        object.__setattr__(self, "hidden_size", int(h))
        object.__setattr__(self, "input_mean", _frozen(self.input_mean, (2,)))
        object.__setattr__(self, "input_std", _frozen(self.input_std, (2,)))
        object.__setattr__(self, "W1", _frozen(W1, (h, 2)))
        object.__setattr__(self, "b1", _frozen(self.b1, (h,)))
        object.__setattr__(self, "W2", _frozen(np.reshape(self.W2, (1, -1)), (1, h)))
        object.__setattr__(self, "b2", float(_frozen(self.b2, ())))
        if np.any(self.input_std <= 0):
            raise InputError("input_std entries must be positive")

    kind = "nn"


Params = Union[VtMicroParams, PbParams, NnParams]


def _result(x, *inputs):
    if all(np.ndim(i) == 0 for i in inputs):
        return float(x)
    return x


def vt_micro_log(p: VtMicroParams, v, a):
    """Log-domain polynomial, branch chosen per sample (``a == 0`` uses L)."""
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    vp = np.stack([v**i for i in range(VT_DEGREE)], axis=-1)
    ap = np.stack([a**j for j in range(VT_DEGREE)], axis=-1)
    pos = np.einsum("...i,ij,...j->...", vp, p.L, ap)
    neg = np.einsum("...i,ij,...j->...", vp, p.M, ap)
    return np.where(a >= 0, pos, neg)


def vt_micro_predict(p: VtMicroParams, v, a, log_bound: float = DEFAULT_LOG_BOUND):
    s = vt_micro_log(p, v, a)
    if np.any(s > log_bound):
        raise NumericOverflow(
            f"VT-MICRO log-domain value {np.max(s):.4g} exceeds bound {log_bound}"
        )
    return _result(np.exp(s), v, a)


def pb_raw(p: PbParams, v, a):
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    k1, k2, k3, k4 = p.alpha
    return k1 * a * v + k2 * v + k3 * v**2 + k4 * v**3


def pb_predict(p: PbParams, v, a):
    return _result(np.maximum(pb_raw(p, v, a), 0.0), v, a)


def nn_raw(p: NnParams, v, a):
    """Unclamped network output, the quantity minimized during training."""
    x = np.stack(np.broadcast_arrays(np.asarray(v, float), np.asarray(a, float)), axis=-1)
    z = (x - p.input_mean) / p.input_std
    h = np.tanh(z @ p.W1.T + p.b1)
    return h @ p.W2[0] + p.b2


def nn_predict(p: NnParams, v, a):
    return _result(np.maximum(nn_raw(p, v, a), 0.0), v, a)


def predict(p: Params, v, a):
    """Dispatch on the parameter type."""
    if isinstance(p, VtMicroParams):
        return vt_micro_predict(p, v, a)
    if isinstance(p, PbParams):
        return pb_predict(p, v, a)
    if isinstance(p, NnParams):
        return nn_predict(p, v, a)
    raise TypeError(f"unknown parameter type {type(p).__name__}")


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------


def _g17(x: float) -> str:
    return format(float(x), ".17g")


def _vec(xs) -> str:
    return ", ".join(_g17(x) for x in np.ravel(xs))


def param_lines(p: Params) -> list[str]:
    """Flat ``name = value`` lines for the coefficients of ``p``."""
    if isinstance(p, VtMicroParams):
        return [
            f"{name}_{i}_{j} = {_g17(C[i, j])}"
            for name, C in (("L", p.L), ("M", p.M))
            for i in range(VT_DEGREE)
            for j in range(VT_DEGREE)
        ]
    if isinstance(p, PbParams):
        return [f"alpha_{k + 1} = {_g17(x)}" for k, x in enumerate(p.alpha)]
    if isinstance(p, NnParams):
        return [
            f"hidden_size = {p.hidden_size}",
            f"input_mean = {_vec(p.input_mean)}",
            f"input_std = {_vec(p.input_std)}",
            f"W1 = {_vec(p.W1)}",
            f"b1 = {_vec(p.b1)}",
            f"W2 = {_vec(p.W2)}",
            f"b2 = {_g17(p.b2)}",
        ]
    raise TypeError(f"unknown parameter type {type(p).__name__}")


def dumps_model(p: Params) -> str:
    return "\n".join([f"model_kind: {p.kind}", f"version: {FORMAT_VERSION}", *param_lines(p)]) + "\n"


def save_model(path, p: Params) -> None:
    Path(path).write_text(dumps_model(p))


def parse_key_values(text: str, source: str = "<string>") -> dict[str, str]:
    """Parse ``key: value`` and ``key = value`` lines, ignoring blanks and ``#`` comments."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        for sep in ("=", ":"):
            key, found, value = line.partition(sep)
            if found:
                break
        else:
            raise ModelFormatError(f"{source}:{lineno}: expected 'name = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def loads_model(text: str, source: str = "<string>") -> Params:
    kv = parse_key_values(text, source)
    kind = kv.get("model_kind")
    if kv.get("version") != str(FORMAT_VERSION):
        raise ModelFormatError(f"{source}: unsupported version {kv.get('version')!r}")

    def num(key):
        try:
            return float(kv[key])
        except KeyError:
            raise ModelFormatError(f"{source}: missing field {key!r}") from None
        except ValueError:
            raise ModelFormatError(f"{source}: field {key!r} is not a number") from None

    def nums(key):
        try:
            return [float(x) for x in kv[key].split(",")]
        except KeyError:
            raise ModelFormatError(f"{source}: missing field {key!r}") from None
        except ValueError:
            raise ModelFormatError(f"{source}: field {key!r} is not a number list") from None

    try:
        if kind == "vtmicro":
            L = [[num(f"L_{i}_{j}") for j in range(VT_DEGREE)] for i in range(VT_DEGREE)]
            M = [[num(f"M_{i}_{j}") for j in range(VT_DEGREE)] for i in range(VT_DEGREE)]
            return VtMicroParams(L, M)
        if kind == "pb":
            return PbParams([num(f"alpha_{k}") for k in range(1, 5)])
        if kind == "nn":
            h = int(num("hidden_size"))
            return NnParams(
                input_mean=nums("input_mean"),
                input_std=nums("input_std"),
                W1=np.reshape(nums("W1"), (h, 2)),
                b1=nums("b1"),
                W2=np.reshape(nums("W2"), (1, h)),
                b2=num("b2"),
                hidden_size=h,
            )
    except (InputError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{source}: {exc}") from None
    raise ModelFormatError(f"{source}: unknown model_kind {kind!r}")


def load_model(path) -> Params:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ModelFormatError(f"{p}: cannot read ({exc.strerror or exc})") from exc
    return loads_model(text, str(p))
