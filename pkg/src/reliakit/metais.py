"""Importance sampling driven by a probabilistic surrogate.

Instead of substituting the surrogate for the true model, the surrogate's
classification probability pi(x) = P[response at x <= 0] shapes an
instrumental density proportional to pi(x) f_X(x).  The failure
probability splits exactly into two factors:

    pf = alpha_corr x pf_epsilon

where pf_epsilon = E[pi(X)] costs only surrogate sweeps, and alpha_corr
averages 1{g <= 0} / pi over draws of the instrumental density, which is
where the few true-model calls go.  The product is unbiased conditional on
the surrogate, however coarse the surrogate is; the surrogate quality only
controls the variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, ndtri

from .errors import EstimatorError, SamplerError
from .kriging import (
    KrigingModel,
    _pi_values,
    adaptive_margin_design,
    krig_predict_batch,
)
from .limitstate import EvalLedger, LimitState, evaluate_batch
from .mcmc import slice_sample
from .probmodel import RandomVector, make_rng

__all__ = [
    "MetaIsResult",
    "instrumental_density",
    "estimate_pf_epsilon",
    "sample_instrumental",
    "estimate_alpha_corr",
    "metais_estimate",
]


@dataclass
class MetaIsResult:
    """Two-factor estimate with its cost split.

    ``pf`` is stored as the exact product alpha_corr * pf_epsilon.  The
    combined coefficient of variation assumes the two factors are
    independent, which holds because they are estimated from disjoint
    random streams.
    """

    pf: float
    pf_epsilon: float
    alpha_corr: float
    cov_epsilon: float
    cov_alpha: float
    cov_total: float
    n_model_calls_doe: int
    n_model_calls_corr: int
    converged: bool
    extras: dict = field(default_factory=dict)

    @property
    def beta(self) -> float:
        if self.pf <= 0.0:
            return math.inf
        if self.pf >= 1.0:
            return -math.inf
        return float(-ndtri(self.pf))

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, (np.floating, np.integer)):
                return clean(v.item())
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return {
            "method": "metais",
            "pf": clean(float(self.pf)),
            "beta": clean(self.beta),
            "pf_epsilon": clean(float(self.pf_epsilon)),
            "alpha_corr": clean(float(self.alpha_corr)),
            "cov_epsilon": clean(float(self.cov_epsilon)),
            "cov_alpha": clean(float(self.cov_alpha)),
            "cov": clean(float(self.cov_total)),
            "n_calls_doe": int(self.n_model_calls_doe),
            "n_calls_corr": int(self.n_model_calls_corr),
            "n_calls": int(self.n_model_calls_doe + self.n_model_calls_corr),
            "converged": bool(self.converged),
            "extras": clean(self.extras),
        }


def instrumental_density(model: KrigingModel, rv: RandomVector, x) -> np.ndarray | float:
    """Unnormalized instrumental density pi(x) * f_X(x).

    The normalizing constant is pf_epsilon, but no consumer ever needs it:
    the sampler works on the unnormalized target and the estimator divides
    by pi alone.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    mu, sd = krig_predict_batch(model, pts)
    vals = _pi_values(mu, sd) * np.asarray(rv.joint_pdf(pts))
    return float(vals[0]) if single else vals


def estimate_pf_epsilon(
    model: KrigingModel,
    rv: RandomVector,
    n_eps: int = 100_000,
    seed=None,
    batch: int = 100_000,
) -> tuple[float, float]:
    """Average classification probability over the input distribution.

    Surrogate-only Monte Carlo: zero true-model calls.  Returns the
    estimate and its coefficient of variation.
    """
    if n_eps < 1:
        raise ValueError("n_eps must be >= 1")
    rng = make_rng(seed)
    parts: list[float] = []
    parts_sq: list[float] = []
    done = 0
    while done < n_eps:
        k = min(batch, n_eps - done)
        xs = rv.sample(k, scheme="monte_carlo", seed=rng)
        mu, sd = krig_predict_batch(model, xs)
        pi = _pi_values(mu, sd)
        parts.append(float(np.sum(pi)))
        parts_sq.append(float(np.sum(pi * pi)))
        done += k
    mean = math.fsum(parts) / n_eps
    second = math.fsum(parts_sq) / n_eps
    var = max(second - mean * mean, 0.0) / n_eps
    cov = math.sqrt(var) / mean if mean > 0.0 else math.inf
    return mean, cov


def _log_pi_standard(model: KrigingModel, rv: RandomVector):
    """log pi at a standard-space point, via the exact transform."""

    def log_pi(u: np.ndarray) -> float:
        x = np.atleast_2d(rv.from_standard(u))
        mu, sd = krig_predict_batch(model, x)
        if sd[0] == 0.0:
            return 0.0 if mu[0] <= 0.0 else -math.inf
        return float(log_ndtr(-mu[0] / sd[0]))

    return log_pi


def sample_instrumental(
    model: KrigingModel,
    rv: RandomVector,
    n: int,
    seed=None,
    return_stats: bool = False,
):
    """Draw n points from the instrumental density by slice sampling.

    The chain runs in independent standard-normal coordinates, where the
    input-density factor of the target is an exact quadratic, and starts
    from the design (or probe) point with the largest pi.  Burn-in and
    thinning follow the shared chain defaults; draws are deterministic per
    seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    pts = model.design.points
    mu_d, sd_d = krig_predict_batch(model, pts)
    pi_d = _pi_values(mu_d, sd_d)
    probe = rv.sample(512, scheme="monte_carlo", seed=rng)
    mu_p, sd_p = krig_predict_batch(model, probe)
    pi_p = _pi_values(mu_p, sd_p)
    best_d, best_p = float(np.max(pi_d)), float(np.max(pi_p))
    if max(best_d, best_p) <= 1e-12:
        raise SamplerError(
            "no design or probe point carries appreciable failure "
            "probability; the instrumental density has no reachable support"
        )
    x_start = pts[int(np.argmax(pi_d))] if best_d >= best_p else probe[int(np.argmax(pi_p))]
    u0 = rv.to_standard(x_start)

    log_pi = _log_pi_standard(model, rv)

    def log_target(u: np.ndarray) -> float:
        lp = log_pi(u)
        if lp == -math.inf:
            return -math.inf
        return lp - 0.5 * float(u @ u)

    chain = slice_sample(
        log_target,
        np.atleast_1d(u0),
        n,
        rng,
        widths=1.0,
        thin=10,
        burn_frac=0.2,
        return_stats=return_stats,
    )
    if return_stats:
        chain, stats = chain
        return np.atleast_2d(rv.from_standard(chain)), stats
    return np.atleast_2d(rv.from_standard(chain))


def estimate_alpha_corr(
    ls: LimitState,
    model: KrigingModel,
    samples_from_h,
    ledger: EvalLedger | None = None,
    threads: int = 1,
) -> tuple[float, float]:
    """Correction factor: average of 1{g <= 0} / pi over instrumental draws.

    This is the only place the true model is called; the ledger increments
    by exactly the number of samples.  A failing sample where pi has
    underflowed to zero makes the weight undefined and raises
    :class:`EstimatorError` (the sampler's support guarantee should
    preclude it).
    """
    xs = np.atleast_2d(np.asarray(samples_from_h, dtype=float))
    n = xs.shape[0]
    g = evaluate_batch(ls, xs, ledger=ledger, threads=threads)
    mu, sd = krig_predict_batch(model, xs)
    pi = _pi_values(mu, sd)
    fail = g <= 0.0
    if np.any(fail & (pi <= 0.0)):
        raise EstimatorError(
            "a failing correction sample has zero classification "
            "probability; cannot weight it"
        )
    w = np.zeros(n)
    w[fail] = 1.0 / pi[fail]
    mean = math.fsum(w) / n
    second = math.fsum(float(v) * float(v) for v in w) / n
    var = max(second - mean * mean, 0.0) / n
    cov = math.sqrt(var) / mean if mean > 0.0 else math.inf
    return mean, cov


def metais_estimate(
    ls: LimitState,
    rv: RandomVector,
    n_epsilon: int = 100_000,
    n_corr: int = 200,
    k: float = 1.96,
    n_clusters: int = 4,
    tol: float = 0.10,
    budget: int = 100,
    n_bounds: int = 50_000,
    n_chain: int = 250,
    trend: str = "constant",
    model: KrigingModel | None = None,
    seed=None,
    ledger: EvalLedger | None = None,
    threads: int = 1,
) -> MetaIsResult:
    """Full pipeline: build or accept a surrogate, then the two-factor estimate.

    With ``model=None`` a surrogate is trained by margin-sampling
    enrichment until its failure-probability band is tighter than ``tol``
    (or the DoE budget runs out).  A supplied ``model`` is used as-is,
    which preserves unbiasedness: the surrogate only shapes the
    instrumental density, it never replaces the true model.

    The three stages (enrichment, normalization sweep, correction
    sampling) draw from independently spawned random streams, so the two
    estimated factors are independent and their squared coefficients of
    variation add.
    """
    rng = make_rng(seed)
    s_doe, s_eps, s_chain = rng.spawn(3)
    extras: dict = {}
    if model is None:
        doe = adaptive_margin_design(
            ls,
            rv,
            k=k,
            n_clusters=n_clusters,
            tol=tol,
            budget=budget,
            n_bounds=n_bounds,
            n_chain=n_chain,
            trend=trend,
            seed=s_doe,
            ledger=ledger,
            threads=threads,
        )
        model = doe.model
        n_doe = doe.n_calls
        converged = doe.converged
        extras["doe_stop_reason"] = doe.stop_reason
        extras["doe_trace"] = doe.trace
    else:
        n_doe = model.design.size
        converged = True
        extras["prebuilt_surrogate"] = True

    pf_eps, cov_eps = estimate_pf_epsilon(model, rv, n_eps=n_epsilon, seed=s_eps)
    if pf_eps <= 0.0:
        raise EstimatorError(
            "the surrogate assigns zero probability to failure everywhere; "
            "no instrumental density exists"
        )
    samples, stats = sample_instrumental(
        model, rv, n_corr, seed=s_chain, return_stats=True
    )
    alpha, cov_alpha = estimate_alpha_corr(ls, model, samples, ledger=ledger, threads=threads)
    pf = alpha * pf_eps
    cov_total = math.sqrt(cov_alpha * cov_alpha + cov_eps * cov_eps)
    extras["chain_stats"] = stats
    return MetaIsResult(
        pf=pf,
        pf_epsilon=pf_eps,
        alpha_corr=alpha,
        cov_epsilon=cov_eps,
        cov_alpha=cov_alpha,
        cov_total=cov_total,
        n_model_calls_doe=n_doe,
        n_model_calls_corr=samples.shape[0],
        converged=converged,
        extras=extras,
    )
