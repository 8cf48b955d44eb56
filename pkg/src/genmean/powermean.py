"""Power means of order r over positive values, evaluated in the log domain.

M_r(a) = ((1/k) sum a_i^r)^(1/r), extended continuously by the geometric mean
at r = 0, the minimum at r = -inf and the maximum at r = +inf.

All kernels take log-values (``-inf`` encodes a zero input) and reduce along
one axis, so the same code serves a single vector, a k x L matrix of class
probabilities and an N x k x L batch.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "PowerOrder",
    "as_order",
    "log_power_mean",
    "log_power_mean_scalar",
    "power_mean",
    "logsumexp",
]


@functools.total_ordering
@dataclass(frozen=True)
class PowerOrder:
    """Aggregation order r in the extended reals.

    ``value`` is a float; ``-inf`` and ``+inf`` select the min/max branches
    and exactly ``0.0`` selects the geometric branch. No thresholding is ever
    applied, so ``PowerOrder(1e-300)`` is a finite nonzero order.
    """

    value: float

    def __post_init__(self):
        v = float(self.value)
        if math.isnan(v):
            raise InvalidInputError("order must not be NaN")
        # normalise -0.0 so equality and hashing agree with 0.0
        object.__setattr__(self, "value", v + 0.0)

    @classmethod
    def neg_inf(cls) -> "PowerOrder":
        return cls(-math.inf)

    @classmethod
    def pos_inf(cls) -> "PowerOrder":
        return cls(math.inf)

    @classmethod
    def parse(cls, text: str) -> "PowerOrder":
        """Parse ``"-inf"``, ``"+inf"``, ``"inf"`` (any case) or a decimal."""
        s = text.strip().lower()
        if s in ("inf", "+inf", "infinity", "+infinity"):
            return cls.pos_inf()
        if s in ("-inf", "-infinity"):
            return cls.neg_inf()
        try:
            v = float(s)
        except ValueError:
            raise InvalidInputError(f"cannot parse order {text!r}") from None
        if not math.isfinite(v):
            raise InvalidInputError(f"cannot parse order {text!r}")
        return cls(v)

    @property
    def is_neg_inf(self) -> bool:
        return self.value == -math.inf

    @property
    def is_pos_inf(self) -> bool:
        return self.value == math.inf

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)

    @property
    def is_geometric(self) -> bool:
        return self.value == 0.0

    def __lt__(self, other):
        if not isinstance(other, PowerOrder):
            return NotImplemented
        return self.value < other.value

    def __float__(self):
        return self.value

    def __str__(self):
        if self.is_neg_inf:
            return "-inf"
        if self.is_pos_inf:
            return "+inf"
        return repr(self.value)


def as_order(order) -> PowerOrder:
    """Coerce a float, string or PowerOrder to a PowerOrder."""
    if isinstance(order, PowerOrder):
        return order
    if isinstance(order, str):
        return PowerOrder.parse(order)
    return PowerOrder(order)


def _check_logs(logs, axis):
    a = np.asarray(logs, dtype=float)
    if a.ndim == 0:
        raise InvalidInputError("log-values must be at least one-dimensional")
    if a.shape[axis] == 0:
        raise InvalidInputError("power mean of an empty collection is undefined")
    if np.isnan(a).any():
        raise InvalidInputError("log-values contain NaN")
    if (a == np.inf).any():
        raise InvalidInputError("log-values contain +inf")
    return a


def logsumexp(a, axis=0):
    """Max-shifted log(sum(exp(a))) along ``axis``.

    Entries equal to ``-inf`` contribute nothing; an all ``-inf`` slice gives
    ``-inf``. The shifted terms are reduced with numpy's pairwise summation.
    """
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - shift), axis=axis, keepdims=True)) + shift
    return np.squeeze(out, axis=axis)


def _log_mean_pow(a, r, axis):
    # (1/r) * log(mean(exp(r*a))), shifted so every exponent is <= 0 and the
    # remainder goes through log1p/expm1 (keeps |r| ~ 1e-8 accurate).
    z = r * a
    c = np.max(z, axis=axis, keepdims=True)
    finite = np.isfinite(c)
    c0 = np.where(finite, c, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.mean(np.expm1(z - c0), axis=axis, keepdims=True)
        out = (c0 + np.log1p(t)) / r
    out = np.where(finite, out, -np.inf)
    return np.squeeze(out, axis=axis)


def log_power_mean(logs, order, axis=0):
    """log M_r of exp(logs) along ``axis``.

    A ``-inf`` entry (zero input) forces ``-inf`` when r <= 0 and simply
    drops out of the sum when r > 0.
    """
    r = as_order(order)
    a = _check_logs(logs, axis)
    if r.is_neg_inf:
        return np.min(a, axis=axis)
    if r.is_pos_inf:
        return np.max(a, axis=axis)
    if r.is_geometric:
        return np.mean(a, axis=axis)
    if r.value > 0:
        return _log_mean_pow(a, r.value, axis)
    has_zero = np.any(a == -np.inf, axis=axis)
    safe = np.where(a == -np.inf, 0.0, a)
    out = _log_mean_pow(safe, r.value, axis)
    return np.where(has_zero, -np.inf, out)


def log_power_mean_scalar(logs, r: float) -> float:
    """Pure-Python :func:`log_power_mean` for a short list of finite floats.

    Used inside scalar integrands where numpy call overhead dominates.
    """
    if r == -math.inf:
        return min(logs)
    if r == math.inf:
        return max(logs)
    if r == 0.0:
        return math.fsum(logs) / len(logs)
    z = [r * a for a in logs]
    c = max(z)
    t = math.fsum(math.expm1(zi - c) for zi in z) / len(z)
    return (c + math.log1p(t)) / r if t > -1.0 else -math.inf


def power_mean(values, order, axis=0):
    """Probability-space wrapper: exp(log_power_mean(log(values)))."""
    v = np.asarray(values, dtype=float)
    if np.isnan(v).any() or (v <= 0).any():
        raise InvalidInputError("power_mean requires strictly positive values")
    return np.exp(log_power_mean(np.log(v), order, axis=axis))
