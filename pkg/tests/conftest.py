import math

import numpy as np
import pytest
from scipy import integrate


def direct_power_mean(values, r):
    """Textbook power mean in probability space; used as an oracle only."""
    v = np.asarray(values, dtype=float)
    if r == -math.inf:
        return v.min()
    if r == math.inf:
        return v.max()
    if r == 0:
        return float(np.prod(v) ** (1.0 / v.size))
    with np.errstate(divide="ignore", over="ignore"):
        return float(np.mean(v**r) ** (1.0 / r))


def normal_pdf(x, mu, sd):
    return math.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))


def direct_log_z(params, r):
    """Z of the pooled 1D density by quadrature over the real line, no log tricks."""

    def f(x):
        return direct_power_mean([normal_pdf(x, m, s) for m, s in params], r)

    pts = sorted(m for m, _ in params)
    lo = min(m - 40 * s for m, s in params)
    hi = max(m + 40 * s for m, s in params)
    edges = [lo] + pts + [hi]
    total = sum(
        integrate.quad(f, a, b, epsabs=0, epsrel=1e-13, limit=400)[0]
        for a, b in zip(edges[:-1], edges[1:])
    )
    return math.log(total)


def random_log_prob_matrix(rng, k, L, spread=3.0):
    logits = spread * rng.standard_normal((k, L))
    return logits - np.log(np.sum(np.exp(logits), axis=1, keepdims=True))


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
