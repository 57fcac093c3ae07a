"""Monte Carlo estimates and summaries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

Z99 = float(stats.norm.ppf(0.995))


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float | None
    n: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.stderr is not None and self.stderr < 0:
            raise ValueError("stderr must be >= 0")

    @property
    def conclusive(self):
        return self.stderr is not None

    def ci(self, z=Z99):
        if self.stderr is None:
            return (np.nan, np.nan)
        return (self.estimate - z * self.stderr, self.estimate + z * self.stderr)


def mc_mean(samples, n_batches=None, **diagnostics):
    """Mean with a batch-means standard error (plain stderr when n_batches is None)."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        return MCEstimate(float(x.mean()) if n else np.nan, None, max(n, 1), diagnostics)
    if n_batches is None or n_batches >= n:
        se = float(x.std(ddof=1) / np.sqrt(n))
    else:
        b = np.array_split(x, n_batches)
        means = np.array([c.mean() for c in b])
        se = float(means.std(ddof=1) / np.sqrt(len(b)))
    return MCEstimate(float(x.mean()), se, n, diagnostics)


def summarize(estimates, n_batches=20):
    """Report rows (name, estimate, stderr, n, ci_lo, ci_hi, status) with 99% normal CIs.

    ``estimates`` maps names to raw sample arrays or MCEstimate objects. With
    fewer than two samples the stderr is absent and the row is INCONCLUSIVE.
    """
    rows = []
    for name in estimates:
        e = estimates[name]
        if not isinstance(e, MCEstimate):
            e = mc_mean(e, n_batches)
        lo, hi = e.ci()
        rows.append({"name": name, "estimate": e.estimate, "stderr": e.stderr, "n": e.n,
                     "ci_lo": lo, "ci_hi": hi,
                     "status": "OK" if e.conclusive else "INCONCLUSIVE"})
    return rows


def ols_slope(x, y, sigma=None):
    """Weighted least-squares slope and its standard error."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    w = np.ones_like(x) if sigma is None else 1.0 / np.asarray(sigma, float) ** 2
    X = np.column_stack([np.ones_like(x), x])
    A = X.T @ (w[:, None] * X)
    beta = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    if sigma is None:
        r = y - X @ beta
        dof = max(x.size - 2, 1)
        cov = cov * float(r @ r) / dof
    return float(beta[1]), float(np.sqrt(cov[1, 1])), float(beta[0])


def dkw_epsilon(n, alpha=0.01):
    """Half-width of the simultaneous (1 - alpha) DKW band for an empirical CDF."""
    return float(np.sqrt(np.log(2.0 / alpha) / (2.0 * n)))
