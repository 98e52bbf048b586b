"""Univariate mixture model for per-record link counts.

Each latent record class g contributes links as Bernoulli(p_g) true
positives convolved with Poisson(lambda_g) false positives; classes mix
with weights alpha_g.  Parameters are estimated by maximizing the capped
composite log-likelihood of the observed counts, the number of classes
is chosen by AIC, and the fitted aggregates p_bar / lambda_bar translate
into precision, coverage and recall estimates.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, pdtr

from ._optim import (
    FitOptions,
    interval_from_real,
    interval_jacobian,
    real_from_interval,
    sigmoid,
    logit,
    stick_break,
    stick_break_inverse,
    stick_break_vjp,
)

__all__ = [
    "UniMixtureParams",
    "CountHistogram",
    "AccuracySummary",
    "FitResult",
    "SelectionResult",
    "comp_pmf",
    "mix_pmf",
    "capped_loglik",
    "fit_uni",
    "select_G",
    "accuracy_from_fit",
    "sample_counts",
    "fit_document",
]


@dataclass(frozen=True)
class UniMixtureParams:
    """Mixture parameters, stored in canonical ascending-lambda order."""

    alpha: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    shared_p: bool = False

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if not (alpha.size == p.size == lam.size):
            raise ValueError("component arrays differ in length")
        if abs(alpha.sum() - 1.0) > 1e-9:
            raise ValueError("mixing weights must sum to one")
        if np.any(alpha <= 0):
            raise ValueError("mixing weights must be positive")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("true-positive probabilities outside [0, 1]")
        if np.any(lam <= 0):
            raise ValueError("false-positive rates must be positive")
        if self.shared_p and np.any(p != p[0]):
            raise ValueError("shared_p requires identical p across classes")
        order = np.lexsort((alpha, p, lam))
        object.__setattr__(self, "alpha", alpha[order])
        object.__setattr__(self, "p", p[order])
        object.__setattr__(self, "lam", lam[order])

    @property
    def n_components(self):
        return self.alpha.size

    @property
    def p_bar(self):
        return float(self.alpha @ self.p)

    @property
    def lambda_bar(self):
        return float(self.alpha @ self.lam)


@dataclass(frozen=True)
class CountHistogram:
    """Multiplicities of observed counts."""

    values: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=np.int64))
        counts = np.atleast_1d(np.asarray(self.counts, dtype=np.int64))
        if values.size != counts.size or values.size == 0:
            raise ValueError("histogram needs matching non-empty arrays")
        if np.any(counts <= 0) or np.any(values < 0):
            raise ValueError("histogram needs positive multiplicities, counts >= 0")
        if np.unique(values).size != values.size:
            raise ValueError("histogram values must be unique")
        order = np.argsort(values)
        object.__setattr__(self, "values", values[order])
        object.__setattr__(self, "counts", counts[order])

    @classmethod
    def from_observations(cls, n_values):
        vals, cnts = np.unique(np.asarray(n_values, dtype=np.int64),
                               return_counts=True)
        return cls(vals, cnts)

    @property
    def total(self):
        return int(self.counts.sum())

    def as_dict(self):
        return dict(zip(self.values.tolist(), self.counts.tolist()))


def comp_pmf(n, p, lam):
    """Bernoulli(p) convolved with Poisson(lam), evaluated at n."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    n = np.asarray(n)
    pois = np.exp(n * np.log(lam) - lam - gammaln(n + 1.0))
    pois_shift = pois * n / lam
    return (1.0 - p) * pois + p * pois_shift


def mix_pmf(n, params):
    """Mixture PMF at n (scalar or array)."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n, dtype=float)
    for a, p, l in zip(params.alpha, params.p, params.lam):
        out = out + a * comp_pmf(n, p, l)
    return out if out.shape else float(out)


def capped_loglik(hist, params, tau):
    """Capped composite log-likelihood of a count histogram.

    Counts up to tau contribute log pmf; everything above pools into a
    single tail cell with mass 1 - sum_{n<=tau} pmf.  The tail term is
    omitted when no observation exceeds tau.
    """
    if tau < 1:
        raise ValueError("tau must be at least 1")
    low = hist.values <= tau
    ll = float(np.dot(hist.counts[low],
                      np.log(mix_pmf(hist.values[low], params))))
    tail_count = int(hist.counts[~low].sum())
    if tail_count:
        tail_mass = 1.0 - float(np.sum(mix_pmf(np.arange(tau + 1), params)))
        if tail_mass <= 0:
            return -np.inf
        ll += tail_count * np.log(tail_mass)
    return ll


def sample_counts(params, size, rng):
    """Draw counts from the generative model (class, Bernoulli, Poisson)."""
    g = rng.choice(params.n_components, size=size, p=params.alpha)
    bern = rng.random(size) < params.p[g]
    return bern.astype(np.int64) + rng.poisson(params.lam[g])


# ----------------------------------------------------------------- fitting

def _split_hist(hist, tau):
    low = hist.values <= tau
    return (hist.values[low].astype(float), hist.counts[low].astype(float),
            float(hist.counts[~low].sum()))


def _unpack(x, g, shared_p, nu, lam_max):
    pos = g - 1
    alpha = stick_break(x[:pos], floor=nu) if g > 1 else np.ones(1)
    np_p = 1 if shared_p else g
    p_raw = x[pos:pos + np_p]
    p = nu + (1.0 - 2.0 * nu) * sigmoid(p_raw)
    if shared_p:
        p = np.full(g, p[0])
    lam = interval_from_real(x[pos + np_p:], nu, lam_max)
    return alpha, p, lam


def _pack(alpha, p, lam, shared_p, nu, lam_max):
    g = alpha.size
    parts = []
    if g > 1:
        parts.append(stick_break_inverse(alpha, floor=nu))
    p_use = p[:1] if shared_p else p
    frac = np.clip((p_use - nu) / (1.0 - 2.0 * nu), 1e-12, 1 - 1e-12)
    parts.append(logit(frac))
    parts.append(real_from_interval(np.clip(lam, nu * (1 + 1e-9), lam_max), nu, lam_max))
    return np.concatenate(parts)


def _objective(x, vals, cnts, tail_count, total, g, shared_p, tau, nu, lam_max):
    """Negative mean capped log-likelihood and its gradient."""
    alpha, p, lam = _unpack(x, g, shared_p, nu, lam_max)

    # pois[g, v] = Poisson(v; lam_g); shifted variant via v / lam
    logl = np.log(lam)
    pois = np.exp(np.outer(logl, vals) - lam[:, None] - gammaln(vals + 1.0)[None, :])
    shift = pois * vals[None, :] / lam[:, None]
    comp = (1.0 - p)[:, None] * pois + p[:, None] * shift
    q = np.maximum(alpha @ comp, 1e-300)

    wv = cnts / q
    ll = float(cnts @ np.log(q))
    d_alpha = comp @ wv
    d_p = alpha * ((shift - pois) @ wv)
    dpois = pois * (vals[None, :] / lam[:, None] - 1.0)
    dshift = np.where(vals[None, :] > 0,
                      shift * ((vals[None, :] - 1.0) / lam[:, None] - 1.0), 0.0)
    d_lam = alpha * (((1.0 - p)[:, None] * dpois + p[:, None] * dshift) @ wv)

    if tail_count:
        cdf_t = pdtr(tau, lam)
        cdf_tm1 = pdtr(tau - 1, lam)
        pmf_t = np.exp(tau * logl - lam - gammaln(tau + 1.0))
        pmf_tm1 = pmf_t * tau / lam
        T = 1.0 - float(alpha @ ((1.0 - p) * cdf_t + p * cdf_tm1))
        T = max(T, 1e-300)
        ll += tail_count * np.log(T)
        wt = tail_count / T
        d_alpha += wt * -((1.0 - p) * cdf_t + p * cdf_tm1)
        d_p += wt * alpha * (cdf_t - cdf_tm1)
        d_lam += wt * alpha * ((1.0 - p) * pmf_t + p * pmf_tm1)

    # chain to unconstrained coordinates
    pos = g - 1
    np_p = 1 if shared_p else g
    grad = np.empty_like(x)
    if g > 1:
        grad[:pos] = stick_break_vjp(x[:pos], d_alpha, floor=nu)
    sp = sigmoid(x[pos:pos + np_p])
    dp_dx = (1.0 - 2.0 * nu) * sp * (1.0 - sp)
    grad[pos:pos + np_p] = (d_p.sum() if shared_p else d_p) * dp_dx
    grad[pos + np_p:] = d_lam * interval_jacobian(x[pos + np_p:], nu, lam_max)
    return -ll / total, -grad / total


def _moment_init(hist, g, shared_p, nu):
    total = hist.total
    frac_pos = float(hist.counts[hist.values >= 1].sum()) / total
    p0 = float(np.clip(frac_pos, nu, 1.0 - nu))
    mean_n = float(hist.values @ hist.counts) / total
    base = max(mean_n - p0, 0.05)
    lam = base * 2.0 * np.arange(1, g + 1) / (g + 1.0)
    alpha = np.full(g, 1.0 / g)
    p = np.full(g, p0)
    return alpha, p, lam


@dataclass(frozen=True)
class FitResult:
    """Outcome of one maximum-composite-likelihood fit."""

    params: UniMixtureParams
    loglik: float
    init_loglik: float
    converged: bool
    n_iter: int
    tau: int


def fit_uni(hist, g, tau=10, shared_p=False, opts=FitOptions()):
    """Fit a G-class mixture to a count histogram.

    Runs the moment initialization plus deterministic jittered restarts
    and keeps the best local maximizer.  The achieved log-likelihood
    never falls below the initialization's.
    """
    if g < 1:
        raise ValueError("need at least one class")
    vals, cnts, tail_count = _split_hist(hist, tau)
    total = float(hist.total)
    nu, lam_max = opts.nu, opts.lambda_max
    args = (vals, cnts, tail_count, total, g, shared_p, tau, nu, lam_max)

    alpha0, p0, lam0 = _moment_init(hist, g, shared_p, nu)
    x0 = _pack(alpha0, p0, lam0, shared_p, nu, lam_max)
    init_loglik = -_objective(x0, *args)[0] * total

    best = None
    for start in range(opts.n_starts):
        if start == 0:
            x_start = x0
        else:
            jrng = np.random.default_rng([opts.seed, start])
            x_start = x0 + opts.jitter * jrng.standard_normal(x0.size)
        res = minimize(
            _objective, x_start, args=args, jac=True, method="L-BFGS-B",
            options={"maxiter": opts.max_iter, "ftol": opts.ftol,
                     "gtol": opts.gtol},
        )
        if best is None or res.fun < best.fun:
            best = res
    alpha, p, lam = _unpack(best.x, g, shared_p, nu, lam_max)
    params = UniMixtureParams(alpha=alpha, p=p, lam=lam, shared_p=shared_p)
    return FitResult(
        params=params,
        loglik=float(-best.fun * total),
        init_loglik=float(init_loglik),
        converged=bool(best.success),
        n_iter=int(best.nit),
        tau=tau,
    )


@dataclass(frozen=True)
class SelectionResult:
    """AIC model selection outcome."""

    g_hat: int
    fit: FitResult
    trace: list = field(default_factory=list)


def n_free_params(g, shared_p):
    """Free parameters: (G-1) weights + p's + G rates."""
    return 2 * g if shared_p else 3 * g - 1


def select_G(hist, g_max, tau=10, shared_p=False, opts=FitOptions()):
    """Fit G = 1..g_max and keep the AIC minimizer (ties -> smallest G)."""
    if g_max < 1:
        raise ValueError("g_max must be at least 1")
    trace = []
    best = None
    for g in range(1, g_max + 1):
        fit = fit_uni(hist, g, tau=tau, shared_p=shared_p, opts=opts)
        k = n_free_params(g, shared_p)
        aic = 2.0 * k - 2.0 * fit.loglik
        trace.append({"G": g, "loglik": fit.loglik, "k": k, "aic": aic})
        if best is None or aic < best[0] - 1e-12:
            best = (aic, g, fit)
    return SelectionResult(g_hat=best[1], fit=best[2], trace=trace)


@dataclass(frozen=True)
class AccuracySummary:
    """Linkage accuracy implied by a fitted mixture."""

    p_bar: float
    lambda_bar: float
    precision_hat: Optional[float]
    coverage_lower_bound: float
    coverage_hat: Optional[float] = None
    recall_hat: Optional[float] = None


def accuracy_from_fit(params, known_recall=None, known_coverage=None):
    """Translate fitted aggregates into accuracy estimates.

    p_bar alone lower-bounds the coverage; dividing by a known recall
    gives a coverage estimate, dividing by a known coverage gives a
    recall estimate.
    """
    p_bar = params.p_bar
    lambda_bar = params.lambda_bar
    denom = p_bar + lambda_bar
    precision = p_bar / denom if denom > 0 else None
    coverage_hat = None
    if known_recall is not None:
        if known_recall <= 0:
            raise ValueError("known recall must be positive")
        coverage_hat = p_bar / known_recall
    recall_hat = None
    if known_coverage is not None:
        if known_coverage <= 0:
            raise ValueError("known coverage must be positive")
        recall_hat = p_bar / known_coverage
    return AccuracySummary(
        p_bar=p_bar, lambda_bar=lambda_bar, precision_hat=precision,
        coverage_lower_bound=p_bar, coverage_hat=coverage_hat,
        recall_hat=recall_hat,
    )


def fit_document(fit, aic=None):
    """Structured-text (JSON) rendering of a fit result."""
    doc = {
        "model": "count-mixture-univariate",
        "shared_p": fit.params.shared_p,
        "tau": fit.tau,
        "components": [
            {"alpha": float(a), "p": float(p), "lambda": float(l)}
            for a, p, l in zip(fit.params.alpha, fit.params.p, fit.params.lam)
        ],
        "loglik": fit.loglik,
        "init_loglik": fit.init_loglik,
        "converged": fit.converged,
        "n_iter": fit.n_iter,
    }
    if aic is not None:
        doc["aic"] = aic
    return json.dumps(doc, indent=2, sort_keys=True)
