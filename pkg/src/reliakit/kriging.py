"""Gaussian-process surrogates with adaptive enrichment.

The surrogate is a trend (constant or linear) plus a stationary Gaussian
process.  Fitting maximizes the profiled log-likelihood over the kernel
lengthscales; the trend coefficients and process variance then follow in
closed form.  Prediction returns both a mean and a standard deviation, and
that epistemic deviation drives two enrichment strategies:

* deviation-to-mean ratio ("U"): add the candidate whose sign is most
  uncertain, the classic one-point-per-iteration scheme;
* margin sampling: draw points from the density proportional to
  (probability of lying inside the +-k sigma margin) times the input
  density, cluster the draws, and add one point per cluster.

Both are packaged as drivers that grow a design until their stopping rule
fires, with every true-model call counted.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.linalg import solve_triangular
from scipy.optimize import minimize
from scipy.special import ndtr

from .errors import ConditioningError, FitError, MarginCollapsed, SamplerError
from .limitstate import EvalLedger, ExperimentalDesign, LimitState, evaluate_batch
from .mcmc import slice_sample
from .probmodel import RandomVector, make_rng

__all__ = [
    "CorrelationKernel",
    "kernel_matrix",
    "kernel_cross",
    "KrigingPrediction",
    "KrigingModel",
    "krig_build",
    "krig_fit",
    "krig_predict",
    "krig_predict_batch",
    "u_function",
    "classification_probability",
    "margin_probability",
    "enrich_ak",
    "enrich_margin",
    "krig_pf_bounds",
    "initial_design",
    "AdaptiveResult",
    "ak_mcs",
    "adaptive_margin_design",
    "krig_to_json",
    "krig_from_json",
]

_NUGGET_START = 1e-10
_NUGGET_MAX = 1e-6

_KERNELS = ("squared_exponential", "generalized_exponential")


@dataclass(frozen=True)
class CorrelationKernel:
    """Stationary correlation exp(-sum_k (|h_k| / theta_k)^power).

    ``power`` is 2 for the squared-exponential kind and may be any value in
    (0, 2] for the generalized kind.  R(0) = 1 and R(h) = R(-h) by
    construction.
    """

    kind: str
    theta: tuple[float, ...]
    power: float = 2.0

    def __post_init__(self):
        if self.kind not in _KERNELS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        th = tuple(float(t) for t in np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if any(t <= 0.0 for t in th):
            raise ValueError("lengthscales must be positive")
        object.__setattr__(self, "theta", th)
        q = float(self.power)
        if self.kind == "squared_exponential":
            q = 2.0
        if not 0.0 < q <= 2.0:
            raise ValueError("kernel power must lie in (0, 2]")
        object.__setattr__(self, "power", q)

    @property
    def dimension(self) -> int:
        return len(self.theta)


def kernel_cross(kernel: CorrelationKernel, a, b) -> np.ndarray:
    """Correlation matrix between the rows of a (n, M) and b (m, M)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    th = np.asarray(kernel.theta)
    h = np.abs(a[:, None, :] - b[None, :, :]) / th
    if kernel.power == 2.0:
        s = np.einsum("nmk,nmk->nm", h, h)
    else:
        s = np.sum(h**kernel.power, axis=2)
    return np.exp(-s)


def kernel_matrix(kernel: CorrelationKernel, points, nugget: float = 0.0) -> np.ndarray:
    """Correlation matrix of a point set, with ``nugget`` on the diagonal."""
    r = kernel_cross(kernel, points, points)
    if nugget:
        r[np.diag_indices_from(r)] += nugget
    return r


def _trend_matrix(trend: str, points: np.ndarray) -> np.ndarray:
    if trend == "constant":
        return np.ones((points.shape[0], 1))
    if trend == "linear":
        return np.hstack([np.ones((points.shape[0], 1)), points])
    raise ValueError(f"unknown trend {trend!r} (use 'constant' or 'linear')")


@dataclass(frozen=True)
class KrigingPrediction:
    """Predictive mean and standard deviation at one point."""

    mu: float
    sigma: float


@dataclass
class KrigingModel:
    """A fitted surrogate with its cached factorization.

    The stored pieces let a prediction run as a handful of matrix-vector
    products: ``_linv`` is the inverse lower Cholesky factor of the
    regularized correlation matrix, ``_w`` the kriging weights of the
    residual, ``_ft`` the whitened trend matrix and ``_gci`` the inverse
    Cholesky factor of its normal matrix.
    """

    design: ExperimentalDesign
    trend: str
    kernel: CorrelationKernel
    sigma2: float
    a: np.ndarray
    nugget: float
    diagnostics: dict = field(default_factory=dict)
    _linv: np.ndarray = field(repr=False, default=None)
    _w: np.ndarray = field(repr=False, default=None)
    _ft: np.ndarray = field(repr=False, default=None)
    _gci: np.ndarray = field(repr=False, default=None)

    @property
    def dimension(self) -> int:
        return self.design.dimension


def _factorize(design: ExperimentalDesign, trend: str, kernel: CorrelationKernel,
               nugget_start: float = _NUGGET_START):
    """Cholesky pieces, trend coefficients and variance at fixed lengthscales.

    The nugget starts at ``nugget_start`` and escalates tenfold until the
    factorization succeeds, capped at 1e-6.
    """
    pts, y = design.points, design.responses
    n = pts.shape[0]
    r0 = kernel_matrix(kernel, pts)
    nugget = nugget_start
    L = None
    while True:
        try:
            L = np.linalg.cholesky(r0 + nugget * np.eye(n))
            break
        except np.linalg.LinAlgError:
            nugget *= 10.0
            if nugget > _NUGGET_MAX * 1.0001:
                raise ConditioningError(
                    "correlation matrix stayed singular up to the nugget cap; "
                    "the design is too clustered for these lengthscales"
                ) from None
    f = _trend_matrix(trend, pts)
    if n <= f.shape[1]:
        raise FitError(f"need more than {f.shape[1]} design points for trend {trend!r}")
    linv = solve_triangular(L, np.eye(n), lower=True)
    ft = linv @ f
    yt = linv @ y
    m_small = ft.T @ ft
    try:
        gc = np.linalg.cholesky(m_small)
    except np.linalg.LinAlgError:
        raise ConditioningError("trend basis is degenerate on this design") from None
    a = solve_triangular(gc.T, solve_triangular(gc, ft.T @ yt, lower=True), lower=False)
    resid_t = yt - ft @ a
    sigma2 = float(resid_t @ resid_t) / n
    w = linv.T @ resid_t
    gci = solve_triangular(gc, np.eye(gc.shape[0]), lower=True)
    return linv, ft, gci, a, sigma2, nugget, w


def krig_build(
    design: ExperimentalDesign,
    trend: str,
    kernel: CorrelationKernel,
    nugget_start: float = _NUGGET_START,
) -> KrigingModel:
    """Assemble the surrogate at fixed lengthscales (no optimization).

    The trend coefficients and process variance are the closed-form
    generalized-least-squares values at the given kernel.
    """
    if kernel.dimension != design.dimension:
        raise ValueError("kernel dimension does not match the design")
    linv, ft, gci, a, sigma2, nugget, w = _factorize(design, trend, kernel, nugget_start)
    return KrigingModel(
        design=design,
        trend=trend,
        kernel=kernel,
        sigma2=sigma2,
        a=a,
        nugget=nugget,
        _linv=linv,
        _w=w,
        _ft=ft,
        _gci=gci,
    )


def _profiled_objective(design, trend, kernel) -> float:
    """N log sigma2(theta) + log det R(theta), the quantity the MLE minimizes."""
    try:
        linv, ft, gci, a, sigma2, nugget, w = _factorize(design, trend, kernel)
    except (ConditioningError, FitError):
        return 1e30
    n = design.size
    # log det R = -2 sum log diag(Linv)
    logdet = -2.0 * float(np.sum(np.log(np.diag(linv))))
    return n * math.log(max(sigma2, 1e-300)) + logdet


def krig_fit(
    design: ExperimentalDesign,
    trend: str = "constant",
    kernel_kind: str = "squared_exponential",
    power: float = 2.0,
    theta0=None,
    n_starts: int = 5,
    seed=0,
) -> KrigingModel:
    """Fit lengthscales by maximum likelihood, then assemble the surrogate.

    The profiled objective is minimized over log-lengthscales with a
    bounded quasi-Newton method from ``n_starts`` starting points (the
    design span, ``theta0`` when given, and log-uniform random draws).
    Bounds are 1e-2 to 1e2 times the per-dimension design span; an optimum
    pinned at a bound is flagged in ``diagnostics['at_bounds']``.
    """
    pts = design.points
    m = pts.shape[1]
    span = np.ptp(pts, axis=0)
    span[span <= 0.0] = 1.0
    lo = np.log(1e-2 * span)
    hi = np.log(1e2 * span)
    rng = make_rng(seed)

    def objective(log_theta):
        kern = CorrelationKernel(kernel_kind, tuple(np.exp(log_theta)), power)
        return _profiled_objective(design, trend, kern)

    starts = [np.log(span)]
    if theta0 is not None:
        th0 = np.broadcast_to(np.asarray(theta0, dtype=float), (m,))
        starts.insert(0, np.log(np.clip(th0, np.exp(lo), np.exp(hi))))
    # cheap isotropic prescreen; seeds the search in the best coarse basin
    # so the multistart cannot lose to a plain grid scan
    scales = np.linspace(0.0, 1.0, 17)
    pre = min((objective(lo + s * (hi - lo)), s) for s in scales)
    starts.insert(0, lo + pre[1] * (hi - lo))
    while len(starts) < max(1, n_starts):
        starts.append(lo + (hi - lo) * rng.random(m))

    best = None
    for s in starts[: max(1, n_starts)]:
        res = minimize(
            objective,
            s,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": 80},
        )
        if best is None or res.fun < best.fun:
            best = res
    theta = np.exp(best.x)
    kern = CorrelationKernel(kernel_kind, tuple(theta), power)
    model = krig_build(design, trend, kern)
    # L-BFGS-B can stop ~1e-7 log units inside a pinned bound, so detection
    # needs slack; 1e-4 log units is still only 0.01% in theta
    at_bounds = bool(np.any(best.x <= lo + 1e-4) or np.any(best.x >= hi - 1e-4))
    model.diagnostics.update(
        {
            "objective": float(best.fun),
            "at_bounds": at_bounds,
            "n_starts": max(1, n_starts),
        }
    )
    if at_bounds:
        warnings.warn(
            "lengthscale optimum sits on its search bound; the fit may be "
            "over- or under-smoothing",
            RuntimeWarning,
        )
    return model


def _predict_arrays(model: KrigingModel, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance for a block of points (no chunking)."""
    rc = kernel_cross(model.kernel, model.design.points, xs)  # (N, n)
    f = _trend_matrix(model.trend, xs)  # (n, P)
    mu = f @ model.a + rc.T @ model._w
    t = model._linv @ rc  # (N, n)
    u = model._ft.T @ t - f.T  # (P, n)
    v = model._gci @ u
    var = model.sigma2 * (1.0 - np.einsum("ij,ij->j", t, t) + np.einsum("ij,ij->j", v, v))
    neg = var < 0.0
    if np.any(neg):
        worst = float(-var[neg].min())
        if worst > 1e-8 * model.sigma2:
            model.diagnostics["variance_clamp"] = max(
                worst, model.diagnostics.get("variance_clamp", 0.0)
            )
        var = np.where(neg, 0.0, var)
    return mu, var


def krig_predict_batch(model: KrigingModel, xs, chunk: int = 20_000):
    """Vectorized prediction: (means, standard deviations) per row of xs."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n = xs.shape[0]
    mu = np.empty(n)
    sd = np.empty(n)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        m_blk, v_blk = _predict_arrays(model, xs[s:e])
        mu[s:e] = m_blk
        sd[s:e] = np.sqrt(v_blk)
    return mu, sd


def krig_predict(model: KrigingModel, x) -> KrigingPrediction:
    """Predictive mean and deviation at a single point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    mu, var = _predict_arrays(model, x)
    return KrigingPrediction(mu=float(mu[0]), sigma=float(math.sqrt(var[0])))


def u_function(pred: KrigingPrediction) -> float:
    """Sign-uncertainty ratio |mu| / sigma.

    Zero deviation means the sign is certain: the ratio is +inf, except at
    mu = 0 where the point sits exactly on the predicted boundary and the
    ratio is 0.
    """
    if pred.sigma == 0.0:
        return 0.0 if pred.mu == 0.0 else math.inf
    return abs(pred.mu) / pred.sigma


def _u_values(mu: np.ndarray, sd: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.abs(mu) / sd
    u[(sd == 0.0) & (mu == 0.0)] = 0.0
    u[(sd == 0.0) & (mu != 0.0)] = math.inf
    return u


def classification_probability(pred: KrigingPrediction, t: float = 0.0) -> float:
    """Probability that the true response at this point lies below t.

    With zero deviation this degenerates to the exact indicator of
    mu <= t.
    """
    if pred.sigma == 0.0:
        return 1.0 if pred.mu <= t else 0.0
    return float(ndtr((t - pred.mu) / pred.sigma))


def _pi_values(mu: np.ndarray, sd: np.ndarray, t: float = 0.0) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (t - mu) / sd
    out = ndtr(z)
    zero = sd == 0.0
    if np.any(zero):
        out = np.where(zero, (mu <= t).astype(float), out)
    return out


def margin_probability(pred: KrigingPrediction, k: float) -> float:
    """Probability that the true response lies within +-k deviations of 0.

    This is the chance the point falls in the band where the surrogate's
    sign classification is still uncertain at level k.
    """
    if k <= 0.0:
        raise ValueError("k must be > 0")
    if pred.sigma == 0.0:
        return 1.0 if pred.mu == 0.0 else 0.0
    z = pred.mu / pred.sigma
    return float(ndtr(k - z) - ndtr(-k - z))


def _margin_values(mu: np.ndarray, sd: np.ndarray, k: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = mu / sd
    out = ndtr(k - z) - ndtr(-k - z)
    zero = sd == 0.0
    if np.any(zero):
        out = np.where(zero, (mu == 0.0).astype(float), out)
    return out


def enrich_ak(model: KrigingModel, candidate_pool) -> np.ndarray:
    """Pick the pool point with the most uncertain sign.

    Returns the row minimizing |mu|/sigma; exact ties go to the larger
    deviation, then to the lowest row index.  No true-model call is made.
    """
    pool = np.atleast_2d(np.asarray(candidate_pool, dtype=float))
    if pool.shape[0] == 0:
        raise ValueError("candidate pool is empty")
    mu, sd = krig_predict_batch(model, pool)
    u = _u_values(mu, sd)
    umin = np.min(u)
    tied = np.flatnonzero(u == umin)
    if tied.size > 1:
        smax = np.max(sd[tied])
        tied = tied[sd[tied] == smax]
    return pool[int(tied[0])].copy()


def _standard_chain(rv: RandomVector, log_weight, u0, n_keep, rng, widths=1.0,
                    return_stats=False):
    """Slice-sample the density (weight o T^-1)(u) x standard normal.

    Running the chain in standard coordinates makes the input-density part
    of the target a simple quadratic and handles correlated inputs through
    the exact transform.
    """

    def log_target(u):
        lw = log_weight(u)
        if lw == -math.inf:
            return -math.inf
        return lw - 0.5 * float(u @ u)

    return slice_sample(
        log_target,
        u0,
        n_keep,
        rng,
        widths=widths,
        thin=10,
        burn_frac=0.2,
        return_stats=return_stats,
    )


def enrich_margin(
    model: KrigingModel,
    rv: RandomVector,
    k: float = 1.96,
    n_chain: int = 250,
    n_clusters: int = 4,
    seed=None,
) -> np.ndarray:
    """Sample the sign-uncertainty margin and return one point per cluster.

    The target density is proportional to (probability of lying in the
    +-k sigma band) times the input density; a slice-sampling chain draws
    ``n_chain`` points from it, k-means splits them into ``n_clusters``
    groups, and the member closest to each centroid is returned (an actual
    sampled point, never an artificial centroid).

    Raises :class:`MarginCollapsed` when neither the design nor the chain
    start region carries any margin probability; adaptive drivers treat
    that as convergence.
    """
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    rng = make_rng(seed)
    pts = model.design.points
    mu_d, sd_d = krig_predict_batch(model, pts)
    margin_d = _margin_values(mu_d, sd_d, k)
    probe = rv.sample(512, scheme="monte_carlo", seed=rng)
    mu_p, sd_p = krig_predict_batch(model, probe)
    margin_p = _margin_values(mu_p, sd_p, k)
    if max(margin_d.max(initial=0.0), margin_p.max(initial=0.0)) < 1e-12:
        raise MarginCollapsed("no candidate carries margin probability")
    if margin_d.max() >= margin_p.max():
        x_start = pts[int(np.argmax(margin_d))]
    else:
        x_start = probe[int(np.argmax(margin_p))]
    u_start = rv.to_standard(x_start)

    def log_weight(u):
        x = rv.from_standard(u)
        c = margin_probability(krig_predict(model, x), k)
        return math.log(c) if c > 0.0 else -math.inf

    chain_u = _standard_chain(rv, log_weight, u_start, n_chain, rng)
    samples = np.atleast_2d(rv.from_standard(chain_u))

    kk = min(n_clusters, samples.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # kmeans2 warns on empty clusters
        centroids, labels = kmeans2(samples, kk, minit="++", seed=rng)
    chosen: list[np.ndarray] = []
    used: set[int] = set()
    for c in range(kk):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        d2 = np.sum((samples[members] - centroids[c]) ** 2, axis=1)
        for j in members[np.argsort(d2)]:
            if int(j) not in used and _is_new_point(samples[j], model.design.points, chosen):
                chosen.append(samples[j])
                used.add(int(j))
                break
    # Top up from unused samples if clusters collapsed onto each other.
    if len(chosen) < kk:
        for j in rng.permutation(samples.shape[0]):
            if len(chosen) >= kk:
                break
            if int(j) not in used and _is_new_point(samples[j], model.design.points, chosen):
                chosen.append(samples[j])
                used.add(int(j))
    if not chosen:
        raise MarginCollapsed("margin sampling produced no usable new point")
    return np.array(chosen)


def _is_new_point(x: np.ndarray, design_pts: np.ndarray, chosen) -> bool:
    if np.any(np.max(np.abs(design_pts - x), axis=1) < 1e-10):
        return False
    return all(np.max(np.abs(c - x)) >= 1e-10 for c in chosen)


def krig_pf_bounds(
    model: KrigingModel,
    rv: RandomVector,
    k: float = 1.96,
    n: int = 100_000,
    seed=None,
    batch: int = 50_000,
) -> tuple[float, float, float]:
    """Failure-probability band implied by the +-k sigma margin.

    One surrogate Monte Carlo sample of size n yields the fractions with
    mu <= -k sigma, mu <= 0 and mu <= +k sigma.  Computed on the same
    draws, so the ordering lower <= central <= upper holds eventwise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    c_lo = c_mid = c_hi = 0
    done = 0
    while done < n:
        m = min(batch, n - done)
        xs = rv.sample(m, scheme="monte_carlo", seed=rng)
        mu, sd = krig_predict_batch(model, xs)
        c_lo += int(np.count_nonzero(mu <= -k * sd))
        c_mid += int(np.count_nonzero(mu <= 0.0))
        c_hi += int(np.count_nonzero(mu <= k * sd))
        done += m
    return c_lo / n, c_mid / n, c_hi / n


def initial_design(rv: RandomVector, n: int, seed=None, box: float = 5.0) -> np.ndarray:
    """Space-filling start for surrogate training.

    A Latin hypercube over the +-box standard-space cube mapped through the
    inverse transform: covers the relevant probability content (box = 5
    deviations) rather than just the bulk of the input density.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    m = rv.dimension
    u = np.empty((n, m))
    for j in range(m):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return np.atleast_2d(rv.from_standard(box * (2.0 * u - 1.0)))


@dataclass
class AdaptiveResult:
    """Outcome of an enrichment driver."""

    model: KrigingModel
    n_calls: int
    converged: bool
    stop_reason: str
    trace: list[dict] = field(default_factory=list)


def _spread(bounds: tuple[float, float, float]) -> float:
    lo, mid, hi = bounds
    if mid <= 0.0:
        return math.inf
    return (hi - lo) / mid


def ak_mcs(
    ls: LimitState,
    rv: RandomVector,
    n_pool: int = 10_000,
    u_stop: float = 2.0,
    budget: int = 150,
    n_initial: int | None = None,
    trend: str = "constant",
    seed=None,
    ledger: EvalLedger | None = None,
    threads: int = 1,
    refit_starts: int = 2,
) -> AdaptiveResult:
    """One-point-at-a-time enrichment against a fixed Monte Carlo pool.

    Starts from a space-filling design of max(12, 3M) points, then
    repeatedly adds the pool point with the most uncertain sign until every
    pool point has |mu| >= u_stop deviations (the misclassification
    probability of the pool is then below Phi(-u_stop) pointwise) or the
    call budget is exhausted.
    """
    rng = make_rng(seed)
    s_design, s_pool, s_fit = rng.spawn(3)
    m = rv.dimension
    n0 = max(12, 3 * m) if n_initial is None else int(n_initial)
    if budget < n0:
        raise ValueError(f"budget {budget} is below the initial design size {n0}")
    pts = initial_design(rv, n0, seed=s_design)
    resp = evaluate_batch(ls, pts, ledger=ledger, threads=threads)
    design = ExperimentalDesign(pts, resp)
    pool = rv.sample(n_pool, scheme="monte_carlo", seed=s_pool)

    theta = None
    trace: list[dict] = []
    added: set[int] = set()
    iteration = 0
    while True:
        full = theta is None or iteration % 10 == 0
        model = krig_fit(
            design,
            trend=trend,
            theta0=theta,
            n_starts=5 if full else refit_starts,
            seed=s_fit.spawn(1)[0],
        )
        theta = model.kernel.theta
        iteration += 1
        mu, sd = krig_predict_batch(model, pool)
        u = _u_values(mu, sd)
        if added:
            u[list(added)] = math.inf
        min_u = float(np.min(u))
        pf_pool = float(np.count_nonzero(mu <= 0.0)) / n_pool
        trace.append(
            {"n_calls": design.size, "min_u": min_u, "pf_pool": pf_pool}
        )
        if min_u >= u_stop:
            return AdaptiveResult(model, design.size, True, "u_threshold", trace)
        if design.size >= budget:
            return AdaptiveResult(model, design.size, False, "budget", trace)
        pick = int(np.argmin(u))
        added.add(pick)
        new_pt = pool[pick]
        if not _is_new_point(new_pt, design.points, []):
            # Coincides with an existing design point; skip it next round.
            continue
        g_new = evaluate_batch(ls, new_pt.reshape(1, -1), ledger=ledger, threads=threads)
        design = design.extended(new_pt.reshape(1, -1), g_new)


def adaptive_margin_design(
    ls: LimitState,
    rv: RandomVector,
    k: float = 1.96,
    n_clusters: int = 4,
    tol: float = 0.10,
    budget: int = 100,
    n_bounds: int = 50_000,
    n_chain: int = 250,
    trend: str = "constant",
    seed=None,
    ledger: EvalLedger | None = None,
    threads: int = 1,
    refit_starts: int = 2,
) -> AdaptiveResult:
    """Margin-sampling enrichment until the pf band is tight.

    Each iteration refits the surrogate, estimates the failure-probability
    band from the +-k sigma margin, and if the relative band width exceeds
    ``tol`` adds ``n_clusters`` clustered margin samples.  A collapsed
    margin also counts as convergence: the surrogate then classifies the
    whole input space with certainty at level k.
    """
    rng = make_rng(seed)
    s_design, s_fit, s_chain, s_bounds = rng.spawn(4)
    m = rv.dimension
    n0 = max(12, 3 * m)
    if budget < n0:
        raise ValueError(f"budget {budget} is below the initial design size {n0}")
    pts = initial_design(rv, n0, seed=s_design)
    resp = evaluate_batch(ls, pts, ledger=ledger, threads=threads)
    design = ExperimentalDesign(pts, resp)

    theta = None
    trace: list[dict] = []
    iteration = 0
    while True:
        full = theta is None or iteration % 4 == 0
        model = krig_fit(
            design,
            trend=trend,
            theta0=theta,
            n_starts=5 if full else refit_starts,
            seed=s_fit.spawn(1)[0],
        )
        theta = model.kernel.theta
        iteration += 1
        bounds = krig_pf_bounds(model, rv, k=k, n=n_bounds, seed=s_bounds.spawn(1)[0])
        spread = _spread(bounds)
        trace.append(
            {
                "n_calls": design.size,
                "pf_lower": bounds[0],
                "pf_central": bounds[1],
                "pf_upper": bounds[2],
                "spread": spread,
            }
        )
        if spread <= tol:
            return AdaptiveResult(model, design.size, True, "bounds_tight", trace)
        if design.size >= budget:
            return AdaptiveResult(model, design.size, False, "budget", trace)
        room = budget - design.size
        try:
            new_pts = enrich_margin(
                model,
                rv,
                k=k,
                n_chain=n_chain,
                n_clusters=min(n_clusters, room),
                seed=s_chain.spawn(1)[0],
            )
        except MarginCollapsed:
            return AdaptiveResult(model, design.size, True, "margin_collapsed", trace)
        g_new = evaluate_batch(ls, new_pts, ledger=ledger, threads=threads)
        design = design.extended(new_pts, g_new)


def krig_to_json(model: KrigingModel) -> str:
    """Serialize a fitted surrogate (design, trend, kernel, coefficients)."""
    doc = {
        "design": {
            "points": model.design.points.tolist(),
            "responses": model.design.responses.tolist(),
        },
        "trend": model.trend,
        "kernel": {
            "kind": model.kernel.kind,
            "theta": list(model.kernel.theta),
            "power": model.kernel.power,
        },
        "sigma2": model.sigma2,
        "a": model.a.tolist(),
        "nugget": model.nugget,
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def krig_from_json(text: str) -> KrigingModel:
    """Rebuild a surrogate from :func:`krig_to_json` output.

    The factorization is recomputed; the stored coefficients act as a
    consistency check against the rebuilt ones.
    """
    doc = json.loads(text)
    design = ExperimentalDesign(
        np.asarray(doc["design"]["points"], dtype=float),
        np.asarray(doc["design"]["responses"], dtype=float),
    )
    kern = CorrelationKernel(
        doc["kernel"]["kind"], tuple(doc["kernel"]["theta"]), doc["kernel"]["power"]
    )
    model = krig_build(design, doc["trend"], kern, nugget_start=doc["nugget"])
    stored_a = np.asarray(doc["a"], dtype=float)
    if not np.allclose(model.a, stored_a, rtol=1e-6, atol=1e-10):
        warnings.warn(
            "rebuilt trend coefficients differ from the stored ones; "
            "the document may have been edited",
            RuntimeWarning,
        )
    return model
