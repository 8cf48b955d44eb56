"""Power-mean pooling of multivariate Gaussian densities.

Closed-form normalisers exist for r = 0 (weighted geometric product) and for
r = 1/n, where the multinomial expansion of ((1/k) sum p_i^(1/n))^n turns
Z into a finite sum of weighted geometric products over the compositions of
n into k parts. Every other order is integrated numerically: adaptive
quadrature in one dimension, importance sampling from the equal-weight
mixture otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import integrate, linalg
from scipy.special import gammaln

from .errors import AccuracyError, CapacityError, DegeneracyError, InvalidInputError
from .powermean import PowerOrder, as_order, log_power_mean, log_power_mean_scalar, logsumexp

LOG_2PI = math.log(2.0 * math.pi)

# width of the 1D integration window, in expert standard deviations
QUAD_HALF_WIDTH = 12.0
MC_CHUNK = 1 << 16


@dataclass(frozen=True)
class IntegrationConfig:
    rel_tol: float = 1e-8
    mc_samples: int = 1 << 20
    seed: int = 0
    composition_cap: int = 10**6
    # relative MC standard error above which the estimate is rejected
    mc_rel_tol: float = 1e-2

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise InvalidInputError("rel_tol must be positive")
        if self.mc_samples < 1 << 10:
            raise InvalidInputError("mc_samples must be at least 1024")
        if self.composition_cap < 1:
            raise InvalidInputError("composition_cap must be positive")


def _cholesky(mat, what):
    try:
        return linalg.cholesky(mat, lower=True)
    except linalg.LinAlgError:
        raise DegeneracyError(f"{what} is not positive definite") from None


class GaussianDensity:
    """N(mean, covariance) in d dimensions, validated by Cholesky (no jitter)."""

    def __init__(self, mean, covariance):
        mu = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(covariance, dtype=float))
        if mu.ndim != 1 or cov.shape != (mu.size, mu.size):
            raise InvalidInputError(
                f"mean shape {mu.shape} and covariance shape {cov.shape} disagree"
            )
        if not (np.isfinite(mu).all() and np.isfinite(cov).all()):
            raise InvalidInputError("Gaussian parameters must be finite")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise InvalidInputError("covariance is not symmetric")
        self.mean = mu
        self.covariance = cov
        self.chol = _cholesky(cov, "covariance")
        if not (np.diag(self.chol) > 0).all():
            raise DegeneracyError("covariance is not positive definite")

    @classmethod
    def univariate(cls, mean, std):
        if not std > 0:
            raise InvalidInputError(f"standard deviation must be positive, got {std}")
        return cls([mean], [[std * std]])

    @property
    def dim(self):
        return self.mean.size

    @cached_property
    def log_det(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @cached_property
    def precision(self):
        inv = linalg.cho_solve((self.chol, True), np.eye(self.dim))
        return 0.5 * (inv + inv.T)

    def _points(self, x):
        pts = np.asarray(x, dtype=float)
        if self.dim == 1 and (pts.ndim == 0 or pts.shape[-1] != 1):
            pts = pts[..., None]
        if pts.shape[-1] != self.dim:
            raise InvalidInputError(f"points of dimension {pts.shape[-1]} for a {self.dim}-d density")
        return pts

    def log_density(self, x):
        """Log-density at one point or at an (..., d) array of points.

        For d = 1 a plain scalar or 1-D array of abscissae is also accepted.
        """
        pts = self._points(x)
        flat = pts.reshape(-1, self.dim) - self.mean
        sol = linalg.solve_triangular(self.chol, flat.T, lower=True)
        maha = np.sum(sol * sol, axis=0)
        out = -0.5 * (self.dim * LOG_2PI + self.log_det + maha)
        out = out.reshape(pts.shape[:-1])
        return float(out) if out.ndim == 0 else out

    def __repr__(self):
        return f"GaussianDensity(mean={self.mean.tolist()}, covariance={self.covariance.tolist()})"


def log_density(g: GaussianDensity, x):
    return g.log_density(x)


def _check_set(gaussians):
    gs = list(gaussians)
    if not gs:
        raise InvalidInputError("need at least one Gaussian")
    d = gs[0].dim
    if any(g.dim != d for g in gs):
        raise InvalidInputError("Gaussians have different dimensions")
    return gs


@dataclass(frozen=True)
class GaussianProductForm:
    """prod_i p_i^{w_i} = exp(log_front - (x'Qx - 2b'x + c)/2)."""

    precision_sum: np.ndarray
    linear: np.ndarray
    quad_const: float
    log_front: float
    weights: np.ndarray

    @cached_property
    def covariance(self):
        c = np.linalg.inv(self.precision_sum)
        return 0.5 * (c + c.T)

    @cached_property
    def mean(self):
        return np.linalg.solve(self.precision_sum, self.linear)

    def as_gaussian(self):
        return GaussianDensity(self.mean, self.covariance)


def weighted_geo_product(gaussians, weights):
    """Weighted geometric product of Gaussians and log of its integral.

    Returns ``(form, log_integral)`` where the normalised product is the
    Gaussian N(Q^-1 b, Q^-1).
    """
    gs = _check_set(gaussians)
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(gs),) or (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
        raise InvalidInputError("weights must be a probability vector, one per Gaussian")
    d = gs[0].dim
    Q = np.zeros((d, d))
    b = np.zeros(d)
    c = 0.0
    front = 0.0
    active = [(wi, g) for wi, g in zip(w, gs) if wi > 0]
    for wi, g in active:
        P = g.precision
        Q += wi * P
        Pm = P @ g.mean
        b += wi * Pm
        c += wi * float(g.mean @ Pm)
        front += wi * (-0.5 * d * LOG_2PI - 0.5 * g.log_det)
    Q = 0.5 * (Q + Q.T)
    L = _cholesky(Q, "accumulated precision")
    mu = linalg.cho_solve((L, True), b)
    # c - b'Q^-1 b written as a sum of nonnegative terms
    spread = sum(wi * float((g.mean - mu) @ g.precision @ (g.mean - mu)) for wi, g in active)
    log_det_q = 2.0 * float(np.sum(np.log(np.diag(L))))
    log_integral = 0.5 * d * LOG_2PI - 0.5 * log_det_q + front - 0.5 * spread
    form = GaussianProductForm(Q, b, c, front, w)
    return form, log_integral


@dataclass(frozen=True)
class NormalizationResult:
    log_z: float
    method: str
    error_estimate: float = 0.0
    details: dict = field(default_factory=dict, compare=False)

    @property
    def z(self):
        return math.exp(self.log_z)


def log_z_geometric(gaussians) -> NormalizationResult:
    gs = _check_set(gaussians)
    k = len(gs)
    _, li = weighted_geo_product(gs, np.full(k, 1.0 / k))
    return NormalizationResult(li, "closed_form_geometric", 0.0)


def compositions(n, k):
    """Yield the compositions of ``n`` into ``k`` nonnegative parts.

    Colexicographic order (last part most significant), one tuple at a time.
    """
    if k == 1:
        yield (n,)
        return
    for last in range(n + 1):
        for head in compositions(n - last, k - 1):
            yield head + (last,)


def composition_count(n, k):
    return math.comb(n + k - 1, k - 1)


def log_multinomial(n, parts):
    return float(gammaln(n + 1) - sum(gammaln(p + 1) for p in parts))


def log_z_reciprocal(gaussians, n, cap=10**6) -> NormalizationResult:
    """Closed-form log Z at order 1/n via the multinomial expansion."""
    gs = _check_set(gaussians)
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise InvalidInputError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    k = len(gs)
    count = composition_count(n, k)
    if count > cap:
        raise CapacityError(
            f"{count} compositions of {n} into {k} parts exceed the cap of {cap}", count
        )
    terms = np.empty(count)
    for j, parts in enumerate(compositions(n, k)):
        _, li = weighted_geo_product(gs, np.asarray(parts, dtype=float) / n)
        terms[j] = log_multinomial(n, parts) + li
    log_z = float(logsumexp(terms)) - n * math.log(k)
    return NormalizationResult(log_z, f"closed_form_reciprocal({n})", 0.0, {"compositions": count})


def reciprocal_index(order):
    """n if ``order`` is exactly 1/n for a positive integer n, else None."""
    r = as_order(order)
    if not r.is_finite or r.value <= 0 or r.value > 1:
        return None
    n = round(1.0 / r.value)
    return n if n >= 1 and 1.0 / n == r.value else None


def log_mean_density(gaussians, order, x):
    """log M_{k,r}(x), the unnormalised pooled log-density."""
    gs = _check_set(gaussians)
    logs = np.stack([np.asarray(g.log_density(x), dtype=float) for g in gs])
    out = log_power_mean(logs, as_order(order), axis=0)
    return float(out) if np.ndim(out) == 0 else out


def _quad_log_z(gs, r, cfg):
    lo = min(float(g.mean[0]) - QUAD_HALF_WIDTH * math.sqrt(g.covariance[0, 0]) for g in gs)
    hi = max(float(g.mean[0]) + QUAD_HALF_WIDTH * math.sqrt(g.covariance[0, 0]) for g in gs)
    breaks = sorted({float(g.mean[0]) for g in gs})

    means = [float(g.mean[0]) for g in gs]
    inv_sd = [1.0 / math.sqrt(g.covariance[0, 0]) for g in gs]
    consts = [-0.5 * (LOG_2PI + g.log_det) for g in gs]
    rv = r.value

    def f(x):
        logs = [c - 0.5 * ((x - m) * s) ** 2 for c, m, s in zip(consts, means, inv_sd)]
        return math.exp(log_power_mean_scalar(logs, rv))

    # split at the expert means so each panel holds at most one peak
    edges = [lo] + [b for b in breaks if lo < b < hi] + [hi]
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-13, limit=500)
        total += val
        err += e
    if not total > 0:
        raise AccuracyError("integral of the pooled density vanished", best=-math.inf)
    log_z = math.log(total)
    rel_err = err / total
    if rel_err > cfg.rel_tol:
        raise AccuracyError(
            f"quadrature relative error {rel_err:.2e} exceeds {cfg.rel_tol:.2e}",
            best=NormalizationResult(log_z, "quadrature_1d", rel_err),
        )
    return NormalizationResult(log_z, "quadrature_1d", rel_err, {"interval": (lo, hi)})


def _mc_log_z(gs, r, cfg):
    k = len(gs)
    d = gs[0].dim
    n_chunks = -(-cfg.mc_samples // MC_CHUNK)
    sums = np.empty(n_chunks)
    sq = np.empty(n_chunks)
    counts = np.empty(n_chunks)
    remaining = cfg.mc_samples
    for c in range(n_chunks):
        m = min(MC_CHUNK, remaining)
        remaining -= m
        rng = np.random.default_rng([cfg.seed, c])
        comp = rng.integers(k, size=m)
        z = rng.standard_normal((m, d))
        x = np.empty((m, d))
        for i, g in enumerate(gs):
            sel = comp == i
            x[sel] = g.mean + z[sel] @ g.chol.T
        logs = np.stack([g.log_density(x) for g in gs])
        log_q = logsumexp(logs, axis=0) - math.log(k)
        w = np.exp(log_power_mean(logs, r, axis=0) - log_q)
        sums[c] = np.sum(w)
        sq[c] = np.sum(w * w)
        counts[c] = m
    n = float(np.sum(counts))
    mean = float(np.sum(sums)) / n
    var = max(float(np.sum(sq)) / n - mean * mean, 0.0)
    if not mean > 0:
        raise AccuracyError("importance-sampling estimate of Z vanished", best=-math.inf)
    rel_se = math.sqrt(var / n) / mean
    res = NormalizationResult(
        math.log(mean), f"monte_carlo({cfg.mc_samples}, {cfg.seed})", rel_se,
        {"samples": cfg.mc_samples, "seed": cfg.seed},
    )
    if rel_se > cfg.mc_rel_tol:
        raise AccuracyError(
            f"Monte Carlo relative standard error {rel_se:.2e} exceeds {cfg.mc_rel_tol:.2e}",
            best=res,
        )
    return res


def log_z_numeric(gaussians, order, cfg: IntegrationConfig | None = None) -> NormalizationResult:
    """Numerical log Z: quadrature for d = 1, importance sampling for d >= 2."""
    gs = _check_set(gaussians)
    cfg = cfg or IntegrationConfig()
    r = as_order(order)
    if gs[0].dim == 1:
        return _quad_log_z(gs, r, cfg)
    return _mc_log_z(gs, r, cfg)


def normalize(gaussians, order, cfg: IntegrationConfig | None = None) -> NormalizationResult:
    """log Z by closed form when one exists (r = 0 or 1/n), numerically otherwise."""
    cfg = cfg or IntegrationConfig()
    r = as_order(order)
    if r.is_geometric:
        return log_z_geometric(gaussians)
    n = reciprocal_index(r)
    if n is not None:
        k = len(list(gaussians))
        if composition_count(n, k) <= cfg.composition_cap:
            return log_z_reciprocal(gaussians, n, cfg.composition_cap)
    return log_z_numeric(gaussians, r, cfg)


def aggregated_log_density(gaussians, order, norm: NormalizationResult, x):
    """log of the normalised pooled density: log M_{k,r}(x) - log Z."""
    return log_mean_density(gaussians, order, x) - norm.log_z


def wisdom_gap_continuous(gaussians, order, norm: NormalizationResult, x):
    gs = _check_set(gaussians)
    avg = np.mean(np.stack([np.asarray(g.log_density(x), dtype=float) for g in gs]), axis=0)
    out = aggregated_log_density(gs, order, norm, x) - avg
    return float(out) if np.ndim(out) == 0 else out


def counterexample_gap_formula(m, order):
    """Unnormalised gap log M_{2,r}(m) - average log-density at x = m.

    For the pair N(-m, 1), N(m, 1) and r < 0 this is
    (1/r) log((1 + exp(-2 r m^2)) / 2) + m^2, which behaves like -m^2.
    """
    r = float(as_order(order).value)
    if not (math.isfinite(r) and r < 0):
        raise InvalidInputError("the closed-form gap applies to finite r < 0")
    if not m > 0:
        raise InvalidInputError("m must be positive")
    return (np.logaddexp(0.0, -2.0 * r * m * m) - math.log(2.0)) / r + m * m


def estimate_nll(gaussians, order, norm: NormalizationResult, samples):
    """Mean and standard error of -log p_agg over ``samples``."""
    pts = np.asarray(samples, dtype=float)
    if pts.size == 0:
        raise InvalidInputError("no samples")
    nll = -np.atleast_1d(aggregated_log_density(gaussians, order, norm, pts))
    n = nll.size
    se = float(np.std(nll, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(nll)), se


def sample_gaussian(g: GaussianDensity, count, seed):
    """``count`` draws of shape (count, d), reproducible from ``seed``."""
    if count < 1:
        raise InvalidInputError("count must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, g.dim))
    return g.mean + z @ g.chol.T
