"""Order-r pooling of k predictive distributions over L classes.

Inputs are log-probability matrices of shape (k, L), one row per ensemble
member, or batches of shape (N, k, L). Per class the k log-probabilities are
reduced with :func:`log_power_mean`, then the scores are renormalised across
classes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .powermean import PowerOrder, as_order, log_power_mean, logsumexp

log = logging.getLogger(__name__)

#: logsumexp drift tolerated on ingest before exact renormalisation
ROW_TOL = 1e-6


@dataclass(frozen=True)
class AggregatedLogProbs:
    log_probs: np.ndarray
    log_z: float
    order: PowerOrder

    @property
    def probs(self):
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class WisdomGapReport:
    """Per-class log p_agg(y) - mean_i log p_i(y)."""

    per_class_gap: np.ndarray
    order: PowerOrder

    def __getitem__(self, y):
        return self.per_class_gap[y]

    @property
    def min_gap(self):
        return float(np.min(self.per_class_gap))


@dataclass(frozen=True)
class Counterexample:
    name: str
    models: np.ndarray  # probabilities, shape (k, L)
    order: PowerOrder
    label: int
    expected_probs: tuple
    expected_aggregated_loglik: float
    expected_average_loglik: float
    notes: str = field(default="", compare=False)

    @property
    def log_models(self):
        return np.log(self.models)


def validate_log_probs(models, tol=ROW_TOL):
    """Check a (..., k, L) log-probability array and renormalise its rows.

    Rows whose logsumexp is off by more than ``tol`` are rejected.
    """
    a = np.array(models, dtype=float)
    if a.ndim < 2:
        raise InvalidInputError(f"expected a (k, L) matrix, got shape {a.shape}")
    k, L = a.shape[-2:]
    if k < 1 or L < 2:
        raise InvalidInputError(f"need k >= 1 models and L >= 2 classes, got k={k}, L={L}")
    if np.isnan(a).any():
        raise InvalidInputError("log-probabilities contain NaN")
    if (a == np.inf).any():
        raise InvalidInputError("log-probabilities contain +inf")
    lse = logsumexp(a, axis=-1)
    bad = ~(np.abs(lse) <= tol)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InvalidInputError(
            f"row {idx} does not sum to one (logsumexp = {lse[idx]:.3g}, tol {tol:g})"
        )
    return a - lse[..., None]


def _aggregate_array(a, r):
    # a: (..., k, L) validated -> (log_probs (..., L), log_z (...))
    log_m = log_power_mean(a, r, axis=-2)
    log_z = logsumexp(log_m, axis=-1)
    return log_m - log_z[..., None], log_z


def unnormalized_scores(models, order):
    """log M_{k,r}(y) per class, before normalisation."""
    a = validate_log_probs(models)
    return log_power_mean(a, as_order(order), axis=-2)


def aggregate(models, order) -> AggregatedLogProbs:
    """Pool a (k, L) log-probability matrix at order ``order``."""
    r = as_order(order)
    a = validate_log_probs(models)
    if a.ndim != 2:
        raise InvalidInputError("aggregate takes one (k, L) matrix; use aggregate_batch")
    lp, lz = _aggregate_array(a, r)
    return AggregatedLogProbs(lp, float(lz), r)


def aggregate_batch(models, order):
    """Vectorised :func:`aggregate` over an (N, k, L) stack.

    Returns ``(log_probs, log_z)`` with shapes (N, L) and (N,).
    """
    a = validate_log_probs(models)
    return _aggregate_array(a, as_order(order))


def wisdom_gap(models, order) -> WisdomGapReport:
    a = validate_log_probs(models)
    agg = aggregate(a, order)
    avg = np.mean(a, axis=0)
    with np.errstate(invalid="ignore"):
        gap = agg.log_probs - avg
    return WisdomGapReport(gap, agg.order)


def _nll_terms(log_probs, labels):
    lp = np.asarray(log_probs, dtype=float)
    y = np.asarray(labels)
    if lp.ndim != 2:
        raise InvalidInputError("expected an (N, L) array of log-probabilities")
    if y.ndim != 1 or len(y) != len(lp):
        raise InvalidInputError(
            f"{len(lp)} predictions but {y.size} labels"
        )
    if len(y) == 0:
        raise InvalidInputError("no samples")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise InvalidInputError("labels must be integers")
        y = y.astype(np.int64)
    L = lp.shape[1]
    if (y < 0).any() or (y >= L).any():
        bad = int(np.flatnonzero((y < 0) | (y >= L))[0])
        raise InvalidInputError(f"label {y[bad]} at sample {bad} outside [0, {L})")
    return -lp[np.arange(len(y)), y]


def cross_entropy(predictions, labels) -> float:
    """Mean negative log-likelihood of ``labels``.

    ``predictions`` is a sequence of :class:`AggregatedLogProbs` or an (N, L)
    array of log-probabilities. Samples whose true class has probability zero
    make the result ``+inf``; their count is logged.
    """
    if len(predictions) and isinstance(predictions[0], AggregatedLogProbs):
        predictions = np.stack([p.log_probs for p in predictions])
    terms = _nll_terms(predictions, labels)
    n_inf = int(np.count_nonzero(np.isinf(terms)))
    if n_inf:
        log.warning("%d of %d samples assign zero probability to the true class", n_inf, len(terms))
        return math.inf
    return float(np.mean(terms))


def individual_nll_baseline(models, labels):
    """Per-model cross-entropy over samples.

    ``models`` is an (N, k, L) stack (or a sequence of N (k, L) matrices).
    Returns ``(mean over models, per-model vector)``.
    """
    a = validate_log_probs(np.stack([np.asarray(m, dtype=float) for m in models]))
    if a.ndim != 3:
        raise InvalidInputError("expected N matrices of shape (k, L)")
    per_model = np.array([cross_entropy(a[:, i, :], labels) for i in range(a.shape[1])])
    return float(np.mean(per_model)), per_model


def extreme_counterexamples():
    """The two discrete failure fixtures for the min and max orders."""
    lo = Counterexample(
        name="min",
        models=np.array([[0.9, 0.1], [0.01, 0.99]]),
        order=PowerOrder.neg_inf(),
        label=0,
        expected_probs=(0.0909, 0.9091),
        expected_aggregated_loglik=-2.40,
        expected_average_loglik=-2.36,
        notes="minimum aggregation at a disagreement point",
    )
    hi = Counterexample(
        name="max",
        models=np.array([[0.9, 0.03, 0.07], [0.9, 0.07, 0.03]]),
        order=PowerOrder.pos_inf(),
        label=0,
        expected_probs=(0.865, 0.067, 0.067),
        expected_aggregated_loglik=-0.145,
        expected_average_loglik=-0.105,
        notes="maximum aggregation at an agreement point",
    )
    return {"min": lo, "max": hi}


def near_consensus_perturb(base, true_class, sigma, copies, seed) -> np.ndarray:
    """Copies of ``base`` with Gaussian noise on the non-true log-probabilities.

    Noise is independent per copy and per class; the true-class entry is left
    as is before each row is renormalised by its logsumexp. ``base`` is a
    log-probability vector. Raw logits can be handled by the caller adding
    noise first and passing log-softmax here with ``sigma=0``.
    """
    b = validate_log_probs(np.asarray(base, dtype=float)[None, :])[0]
    L = b.size
    if not 0 <= true_class < L:
        raise InvalidInputError(f"true_class {true_class} outside [0, {L})")
    if not sigma >= 0:
        raise InvalidInputError("sigma must be nonnegative")
    if copies < 2:
        raise InvalidInputError("need at least two copies")
    rng = np.random.default_rng(seed)
    noise = sigma * rng.standard_normal((copies, L))
    noise[:, true_class] = 0.0
    rows = b[None, :] + noise
    return rows - logsumexp(rows, axis=-1)[:, None]
