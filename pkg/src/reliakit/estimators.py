"""Failure-probability estimators on the true limit state.

Covers the sampling estimators (crude Monte Carlo, importance sampling) and
the gradient-based approximations (mean-value first-order index, and the
first-order index at the most probable failure point found by an iterated
projection search with line search and multiple starts).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConditioningError, EstimatorError, IterationError
from .limitstate import EvalLedger, LimitState, evaluate_batch
from .probmodel import RandomVector, make_rng

__all__ = [
    "ReliabilityResult",
    "mc_cov",
    "estimate_mc",
    "InstrumentalDensity",
    "estimate_is",
    "cornell_index",
    "form",
]


@dataclass
class ReliabilityResult:
    """Outcome of a reliability analysis.

    ``beta`` is the generalized index -PhiInv(pf), infinite when pf is 0 or
    1.  ``n_calls`` counts true limit-state evaluations only; surrogate
    evaluations are free by construction.
    """

    pf: float
    cov: float
    n_calls: int
    method: str
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
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return clean(v.item())
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return {
            "method": self.method,
            "pf": clean(float(self.pf)),
            "beta": clean(self.beta),
            "cov": clean(float(self.cov)),
            "n_calls": int(self.n_calls),
            "extras": clean(self.extras),
        }


def mc_cov(pf: float, n: int) -> float:
    """Coefficient of variation of the crude Monte Carlo estimator.

    sqrt((1 - pf) / (n * pf)): the cost of rare events is that the sample
    size must grow like 1/pf for a fixed relative accuracy.
    """
    if not 0.0 < pf < 1.0:
        raise ValueError("pf must lie strictly between 0 and 1")
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.sqrt((1.0 - pf) / (n * pf))


def estimate_mc(
    ls: LimitState,
    rv: RandomVector,
    n: int,
    seed=None,
    ledger: EvalLedger | None = None,
    threads: int = 1,
    batch: int = 100_000,
) -> ReliabilityResult:
    """Crude Monte Carlo estimate pf = (# failures) / n.

    Evaluates in batches of at most ``batch`` rows to bound memory.  If no
    failure is observed the estimate is 0 with infinite uncertainty; the
    result carries ``extras['no_failures'] = True`` and a warning is issued.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    nf = 0
    done = 0
    while done < n:
        k = min(batch, n - done)
        xs = rv.sample(k, scheme="monte_carlo", seed=rng)
        g = evaluate_batch(ls, xs, ledger=ledger, threads=threads)
        nf += int(np.count_nonzero(g <= 0.0))
        done += k
    pf = nf / n
    extras = {"n_failures": nf}
    if nf == 0:
        warnings.warn(
            "no failures observed; the failure probability is below the "
            "resolution of this sample size",
            RuntimeWarning,
        )
        extras["no_failures"] = True
        cov = math.inf
    elif nf == n:
        cov = 0.0
    else:
        cov = mc_cov(pf, n)
    return ReliabilityResult(pf=pf, cov=cov, n_calls=n, method="mc", extras=extras)


@dataclass(frozen=True)
class InstrumentalDensity:
    """A sampling density h with known pointwise values.

    ``sampler(rng, n)`` returns an (n, M) array of draws; ``density(xs)``
    the corresponding h values.  h only ever appears in the ratio f/h, so it
    must be properly normalized.
    """

    sampler: Callable[[np.random.Generator, int], np.ndarray]
    density: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def from_random_vector(cls, rv: RandomVector) -> "InstrumentalDensity":
        return cls(
            sampler=lambda rng, n: rv.sample(n, scheme="monte_carlo", seed=rng),
            density=lambda xs: np.asarray(rv.joint_pdf(xs)),
        )

    @classmethod
    def gaussian_centered(cls, center, std: float = 1.0) -> "InstrumentalDensity":
        """Isotropic normal bump centered at a chosen point."""
        c = np.asarray(center, dtype=float)
        m = c.size
        norm = (2.0 * math.pi * std * std) ** (-0.5 * m)

        def sampler(rng, n):
            return c + std * rng.standard_normal((n, m))

        def density(xs):
            xs = np.atleast_2d(xs)
            q = np.sum((xs - c) ** 2, axis=1) / (std * std)
            return norm * np.exp(-0.5 * q)

        return cls(sampler=sampler, density=density)

    @classmethod
    def linear_optimal(cls, beta0: float, direction) -> "InstrumentalDensity":
        """Standard normal conditioned on the half-space e . u >= beta0.

        This is the zero-variance instrumental density for the linear limit
        state beta0 - e . u: every weighted sample contributes exactly
        Phi(-beta0).
        """
        e = np.asarray(direction, dtype=float)
        e = e / np.linalg.norm(e)
        m = e.size
        tail = float(ndtr(-beta0))
        norm = (2.0 * math.pi) ** (-0.5 * m)

        def sampler(rng, n):
            # Inverse-CDF draw of the axial coordinate t >= beta0, then an
            # unconditioned draw in the orthogonal complement.
            v = rng.random(n) * tail
            t = -ndtri(v)
            z = rng.standard_normal((n, m))
            z_perp = z - np.outer(z @ e, e)
            return np.outer(t, e) + z_perp

        def density(xs):
            xs = np.atleast_2d(xs)
            phi = norm * np.exp(-0.5 * np.sum(xs * xs, axis=1))
            return np.where(xs @ e >= beta0, phi / tail, 0.0)

        return cls(sampler=sampler, density=density)


def estimate_is(
    ls: LimitState,
    instrumental: InstrumentalDensity,
    f_density: Callable[[np.ndarray], np.ndarray],
    n: int,
    seed=None,
    ledger: EvalLedger | None = None,
    threads: int = 1,
) -> ReliabilityResult:
    """Importance sampling: pf = mean of 1{g <= 0} f(x) / h(x) under h.

    The weighted sum uses compensated summation, so the result does not
    depend on how the draws would be chunked.  A failing sample with zero
    instrumental density makes the estimator undefined and raises
    :class:`EstimatorError`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    xs = instrumental.sampler(rng, n)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    g = evaluate_batch(ls, xs, ledger=ledger, threads=threads)
    fail = g <= 0.0
    h = np.asarray(instrumental.density(xs), dtype=float).reshape(n)
    f = np.asarray(f_density(xs), dtype=float).reshape(n)
    bad = fail & (h <= 0.0) & (f > 0.0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise EstimatorError(
            f"failing sample {i} has zero instrumental density; "
            "the instrumental must dominate f on the failure domain"
        )
    w = np.zeros(n)
    idx = fail & (h > 0.0)
    w[idx] = f[idx] / h[idx]
    pf = math.fsum(w) / n
    if pf > 0.0:
        second = math.fsum(float(v) * float(v) for v in w) / n
        var = max(second - pf * pf, 0.0) / n
        cov = math.sqrt(var) / pf
    else:
        warnings.warn("no failures observed under the instrumental density", RuntimeWarning)
        cov = math.inf
    return ReliabilityResult(
        pf=pf,
        cov=cov,
        n_calls=n,
        method="is",
        extras={"n_failures": int(np.count_nonzero(fail))},
    )


def cornell_index(
    ls: LimitState,
    rv: RandomVector,
    step: float = 1e-6,
    ledger: EvalLedger | None = None,
) -> ReliabilityResult:
    """Mean-value first-order reliability index g(mu) / sqrt(grad' C grad).

    The gradient is taken at the mean by central differences with step
    ``step * std_i`` per coordinate.  Exact for a linear g; for anything
    else it is a first-order approximation that depends on how g is written
    (it is not invariant under equivalent reformulations of g).
    """
    mu = rv.means()
    sig = rv.stds()
    m = rv.dimension
    pts = [mu]
    for i in range(m):
        h = step * sig[i]
        for sgn in (+1.0, -1.0):
            p = mu.copy()
            p[i] += sgn * h
            pts.append(p)
    vals = evaluate_batch(ls, np.array(pts), ledger=ledger)
    g0 = vals[0]
    grad = np.empty(m)
    for i in range(m):
        h = step * sig[i]
        grad[i] = (vals[1 + 2 * i] - vals[2 + 2 * i]) / (2.0 * h)
    var = float(grad @ rv.covariance() @ grad)
    if var <= 0.0 or not math.isfinite(var):
        raise ConditioningError(
            "limit-state variance at the mean is not positive; "
            "the first-order index is undefined"
        )
    beta_c = g0 / math.sqrt(var)
    pf = float(ndtr(-beta_c))
    return ReliabilityResult(
        pf=pf,
        cov=math.nan,
        n_calls=1 + 2 * m,
        method="fosm",
        extras={"beta_mv": beta_c, "g_mean": float(g0), "gradient": grad.tolist()},
    )


def _finite_diff_grad(func, u: np.ndarray, h: float) -> np.ndarray:
    m = u.size
    grad = np.empty(m)
    for i in range(m):
        up = u.copy()
        um = u.copy()
        up[i] += h
        um[i] -= h
        grad[i] = (func(up) - func(um)) / (2.0 * h)
    return grad


def form(
    ls: LimitState,
    rv: RandomVector,
    tol: float = 1e-8,
    gtol: float = 1e-8,
    max_iter: int = 100,
    fd_step: float = 1e-4,
    extra_starts: Sequence | None = None,
    ledger: EvalLedger | None = None,
) -> ReliabilityResult:
    """Most-probable-point search in standard normal space.

    Runs an iterated projection scheme with a merit-function line search
    from several starts (the origin and the unit points on each axis, plus
    any ``extra_starts`` given in standard coordinates), and keeps the
    converged point closest to the origin.  The index is the distance to
    that point, signed by whether the origin is safe; pf = Phi(-beta).

    Raises :class:`IterationError` with the best iterate attached when no
    start converges.
    """
    m = rv.dimension
    calls = 0

    def g_std(u: np.ndarray) -> float:
        nonlocal calls
        calls += 1
        x = rv.from_standard(u)
        val = float(ls(np.asarray(x, dtype=float)))
        if ledger is not None:
            ledger.record(x, np.array([val]))
        return val

    g_origin = g_std(np.zeros(m))
    sign = 1.0 if g_origin > 0.0 else -1.0
    g_scale = max(abs(g_origin), 1e-12)

    starts = [np.zeros(m)]
    for i in range(m):
        for sgn in (+1.0, -1.0):
            s = np.zeros(m)
            s[i] = sgn
            starts.append(s)
    if extra_starts is not None:
        starts.extend(np.asarray(s, dtype=float) for s in extra_starts)

    solutions: list[tuple[np.ndarray, np.ndarray]] = []
    last_iterate = None

    for u0 in starts:
        u = u0.astype(float).copy()
        g = g_std(u)
        converged = False
        for _ in range(max_iter):
            grad = _finite_diff_grad(g_std, u, fd_step)
            gnorm = float(np.linalg.norm(grad))
            if gnorm < 1e-12:
                break  # stationary start; nothing to project along
            alpha = -grad / gnorm
            # Convergence: on the surface, and u aligned with the normal.
            misalign = float(np.linalg.norm(u - (u @ alpha) * alpha))
            if abs(g) <= gtol * g_scale and misalign <= tol * max(1.0, np.linalg.norm(u)):
                converged = True
                break
            direction = ((grad @ u - g) / gnorm**2) * grad - u
            c = 2.0 * float(np.linalg.norm(u)) / gnorm + 10.0
            merit0 = 0.5 * float(u @ u) + c * abs(g)
            lam = 1.0
            u_new, g_new = u + direction, None
            for _ in range(7):
                u_try = u + lam * direction
                g_try = g_std(u_try)
                if 0.5 * float(u_try @ u_try) + c * abs(g_try) < merit0:
                    u_new, g_new = u_try, g_try
                    break
                lam *= 0.5
            if g_new is None:
                # Line search stalled; take the smallest step and move on.
                u_new = u + lam * direction
                g_new = g_std(u_new)
            u, g = u_new, g_new
            last_iterate = u.copy()
        if converged:
            grad = _finite_diff_grad(g_std, u, fd_step)
            solutions.append((u.copy(), -grad / np.linalg.norm(grad)))

    if not solutions:
        raise IterationError(
            "no start of the design-point search converged",
            last_iterate=last_iterate,
        )

    # Deduplicate converged points, then keep the closest to the origin.
    unique: list[tuple[np.ndarray, np.ndarray]] = []
    for u, a in solutions:
        if all(np.linalg.norm(u - v) > 1e-6 for v, _ in unique):
            unique.append((u, a))
    unique.sort(key=lambda ua: float(np.linalg.norm(ua[0])))
    u_star, alpha = unique[0]
    beta = sign * float(np.linalg.norm(u_star))
    pf = float(ndtr(-beta))
    return ReliabilityResult(
        pf=pf,
        cov=math.nan,
        n_calls=calls,
        method="form",
        extras={
            "beta_hl": beta,
            "design_point_u": u_star.tolist(),
            "design_point_x": np.asarray(rv.from_standard(u_star)).tolist(),
            "alpha": alpha.tolist(),
            "n_solutions": len(unique),
        },
    )
