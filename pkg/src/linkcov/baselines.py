"""Comparison coverage estimators.

Alongside the count-mixture estimators the harness reports: the naive
dual-system ratio that ignores linkage errors, two clerical corrections
(one adjusting for both error types, one assuming negligible false
positives among co-captured units), and a two-class conditional
independence mixture over agreement patterns fitted by EM.  The latter
two families reconstruct externally published estimators at the level
of detail stated here; they are compared qualitatively, not value
matched.
"""

from dataclasses import dataclass, field

import numpy as np

from .popsim import PATTERNS

__all__ = [
    "CoverageEstimate",
    "lincoln_petersen",
    "df_dt_estimators",
    "racinskij_fit",
]


@dataclass(frozen=True)
class CoverageEstimate:
    """One estimator's output for a replication."""

    estimator_id: str
    coverage_hat: float
    n_hat: float = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.coverage_hat > 0:
            raise ValueError("coverage estimate must be positive")


def lincoln_petersen(size_a, size_b, m):
    """Dual-system estimate from an intersection count m.

    Population size size_a * size_b / m; coverage of the first list is
    m / size_b.
    """
    if m <= 0:
        raise ValueError("intersection count must be positive")
    return CoverageEstimate(
        estimator_id="lincoln_petersen",
        coverage_hat=m / size_b,
        n_hat=size_a * size_b / m,
        diagnostics={"m": float(m)},
    )


def df_dt_estimators(links2_count, clerical, size_a, size_b):
    """Clerically corrected dual-system estimates.

    Both divide the one-to-one link count by the estimated recall to
    undo deletions; the first further multiplies by the estimated
    precision to remove surviving false positives, the second treats
    false positives among co-captured units as negligible.
    """
    if clerical.recall_hat is None or clerical.recall_hat <= 0:
        raise ValueError("clerical recall estimate must be positive")
    if clerical.precision_hat is None:
        raise ValueError("clerical precision estimate is undefined")
    m_df = links2_count * clerical.precision_hat / clerical.recall_hat
    m_dt = links2_count / clerical.recall_hat
    df = lincoln_petersen(size_a, size_b, m_df)
    dt = lincoln_petersen(size_a, size_b, m_dt)
    return (
        CoverageEstimate("df", df.coverage_hat, df.n_hat,
                         {"m_hat": m_df, "recall_hat": clerical.recall_hat,
                          "precision_hat": clerical.precision_hat}),
        CoverageEstimate("dt", dt.coverage_hat, dt.n_hat,
                         {"m_hat": m_dt, "recall_hat": clerical.recall_hat}),
    )


def _ci_loglik(counts, patterns, w, theta, eta):
    pm = (w * np.prod(theta ** patterns * (1 - theta) ** (1 - patterns), axis=1)
          + (1 - w) * np.prod(eta ** patterns * (1 - eta) ** (1 - patterns),
                              axis=1))
    return float(counts @ np.log(np.maximum(pm, 1e-300)))


def racinskij_fit(pattern_hist, size_b, max_iter=20000, tol=1e-12,
                  n_restarts=3, seed=0):
    """Two-class conditional-independence mixture over agreement patterns.

    pattern_hist holds the multiplicities of the eight patterns (PATTERNS
    order) among the baseline candidate pairs.  EM fits
    P(gamma) = w prod theta_k^g (1-theta_k)^(1-g) + (1-w) prod eta_k ...;
    the class with the larger sum of agreement probabilities is taken as
    the matched class, its weight times the pair total estimates the
    intersection size.
    """
    counts = np.asarray(pattern_hist, dtype=float)
    if counts.size != len(PATTERNS) or counts.sum() <= 0:
        raise ValueError("need multiplicities of the eight patterns")
    patterns = np.array(PATTERNS, dtype=float)
    total = counts.sum()

    # deterministic first start: split pairs by number of agreements
    hi = patterns.sum(axis=1) >= 2
    wk0 = counts * hi
    wu0 = counts * ~hi
    moment_start = (
        min(max(wk0.sum() / total, 0.05), 0.95),
        np.clip((wk0 @ patterns) / max(wk0.sum(), 1e-9), 0.05, 0.95),
        np.clip((wu0 @ patterns) / max(wu0.sum(), 1e-9), 0.05, 0.95),
    )

    best = None
    for restart in range(n_restarts + 1):
        if restart == 0:
            w, theta, eta = moment_start
        else:
            rng = np.random.default_rng([seed, restart])
            w = rng.uniform(0.2, 0.8)
            theta = rng.uniform(0.6, 0.95, size=3)
            eta = rng.uniform(0.05, 0.45, size=3)
        prev = -np.inf
        converged = False
        for it in range(max_iter):
            pm = w * np.prod(theta ** patterns * (1 - theta) ** (1 - patterns),
                             axis=1)
            pu = (1 - w) * np.prod(eta ** patterns * (1 - eta) ** (1 - patterns),
                                   axis=1)
            denom = np.maximum(pm + pu, 1e-300)
            resp = pm / denom
            wk = counts * resp
            w = wk.sum() / total
            w = min(max(w, 1e-12), 1 - 1e-12)
            theta = np.clip((wk @ patterns) / max(wk.sum(), 1e-300), 1e-9,
                            1 - 1e-9)
            wu = counts * (1 - resp)
            eta = np.clip((wu @ patterns) / max(wu.sum(), 1e-300), 1e-9,
                          1 - 1e-9)
            ll = _ci_loglik(counts, patterns, w, theta, eta)
            if ll - prev < tol * max(1.0, abs(ll)) and it > 0:
                converged = True
                prev = ll
                break
            prev = ll
        if best is None or prev > best[0]:
            best = (prev, w, theta.copy(), eta.copy(), converged)

    ll, w, theta, eta, converged = best
    # identify the matched class as the high-agreement one
    if theta.sum() < eta.sum():
        w, theta, eta = 1 - w, eta, theta
    m_hat = w * total
    return CoverageEstimate(
        estimator_id="racinskij",
        coverage_hat=m_hat / size_b,
        n_hat=None,
        diagnostics={
            "w": float(w), "theta": theta.tolist(), "eta": eta.tolist(),
            "loglik": ll, "converged": bool(converged),
            "n_pairs": float(total),
        },
    )
