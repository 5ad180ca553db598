"""Polynomial chaos expansions.

A response is expanded on a basis of polynomials that are orthonormal with
respect to the joint input density: Hermite for Gaussian inputs, Legendre
for uniform, generalized Laguerre for gamma, Jacobi for beta.  The module
provides the univariate families (evaluated by three-term recurrence,
normalized against probability weights), tensorized multivariate bases with
total-degree truncation, least-squares and quadrature-projection fitting,
analytic leave-one-out error, moment and failure-probability
post-processing, and a degree-adaptive fitting loop.

Multi-index sets are kept in graded lexicographic order: ascending total
degree, and within one degree the index with the higher power on the
earlier coordinate comes first.  The coefficient vector of a fitted model
is aligned with that order, so coefficient files are comparable across
runs.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from itertools import product as iter_product

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import gammaln, roots_genlaguerre, roots_jacobi

from .errors import FitError
from .estimators import ReliabilityResult, mc_cov
from .limitstate import EvalLedger, ExperimentalDesign, LimitState, evaluate_batch
from .probmodel import RandomVector, make_rng

__all__ = [
    "PolynomialFamily",
    "univariate_orthonormal",
    "orthonormal_table",
    "gauss_rule",
    "truncation_set",
    "PceBasis",
    "basis_for",
    "physical_to_basis",
    "basis_to_physical",
    "PceModel",
    "pce_fit_regression",
    "pce_fit_projection",
    "pce_loo_error",
    "pce_moments",
    "pce_pf",
    "pce_adaptive",
]

_KINDS = ("hermite", "legendre", "laguerre", "jacobi")

_COND_LIMIT = 1e10
_GRID_LIMIT = 1_000_000


@dataclass(frozen=True)
class PolynomialFamily:
    """One univariate orthonormal family.

    ``laguerre`` takes one shape parameter ``alpha`` > -1 (weight
    x^alpha e^-x on (0, inf)); ``jacobi`` takes ``alpha``, ``beta`` > -1
    (weight (1-x)^alpha (1+x)^beta on (-1, 1)).  Hermite and Legendre are
    parameter-free.
    """

    kind: str
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown polynomial family {self.kind!r}")
        if self.kind in ("laguerre", "jacobi") and self.alpha <= -1.0:
            raise ValueError("laguerre/jacobi parameter alpha must exceed -1")
        if self.kind == "jacobi" and self.beta <= -1.0:
            raise ValueError("jacobi parameter beta must exceed -1")


def orthonormal_table(family: PolynomialFamily, degree: int, x) -> np.ndarray:
    """Values of the orthonormal polynomials 0..degree at point(s) x.

    Returns an array of shape x.shape + (degree+1,).  Each family is
    evaluated by its classical three-term recurrence and then scaled so the
    polynomials have unit norm against the family's probability weight
    (standard normal, uniform on (-1,1), gamma, or scaled beta).  In
    particular the degree-0 polynomial is the constant 1 for every family.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (degree + 1,))
    out[..., 0] = 1.0
    kind = family.kind
    if kind == "hermite":
        if degree >= 1:
            out[..., 1] = x
        for k in range(1, degree):
            out[..., k + 1] = x * out[..., k] - k * out[..., k - 1]
        ks = np.arange(degree + 1)
        out /= np.exp(0.5 * gammaln(ks + 1.0))
    elif kind == "legendre":
        if degree >= 1:
            out[..., 1] = x
        for k in range(1, degree):
            out[..., k + 1] = ((2 * k + 1) * x * out[..., k] - k * out[..., k - 1]) / (k + 1)
        ks = np.arange(degree + 1)
        out *= np.sqrt(2.0 * ks + 1.0)
    elif kind == "laguerre":
        a = family.alpha
        if degree >= 1:
            out[..., 1] = 1.0 + a - x
        for k in range(1, degree):
            out[..., k + 1] = (
                (2 * k + a + 1 - x) * out[..., k] - (k + a) * out[..., k - 1]
            ) / (k + 1)
        ks = np.arange(degree + 1)
        # norm^2 against the gamma(a+1) probability weight: Gamma(k+a+1)/(k! Gamma(a+1))
        out *= np.exp(0.5 * (gammaln(ks + 1.0) + gammaln(a + 1.0) - gammaln(ks + a + 1.0)))
    else:  # jacobi
        a, b = family.alpha, family.beta
        if degree >= 1:
            out[..., 1] = 0.5 * (a - b) + 0.5 * (a + b + 2.0) * x
        for k in range(2, degree + 1):
            c1 = 2.0 * k * (k + a + b) * (2 * k + a + b - 2)
            c2 = (2 * k + a + b - 1) * (a * a - b * b)
            c3 = (2 * k + a + b - 1) * (2 * k + a + b) * (2 * k + a + b - 2)
            c4 = 2.0 * (k + a - 1) * (k + b - 1) * (2 * k + a + b)
            out[..., k] = ((c2 + c3 * x) * out[..., k - 1] - c4 * out[..., k - 2]) / c1
        # squared norms against the raw weight (1-x)^a (1+x)^b; the k=0 form
        # avoids the Gamma pole at a+b = -1.
        ks = np.arange(1, degree + 1)
        ln_h0 = (
            (a + b + 1.0) * math.log(2.0)
            + gammaln(a + 1.0)
            + gammaln(b + 1.0)
            - gammaln(a + b + 2.0)
        )
        if degree >= 1:
            ln_hk = (
                (a + b + 1.0) * math.log(2.0)
                - np.log(2.0 * ks + a + b + 1.0)
                + gammaln(ks + a + 1.0)
                + gammaln(ks + b + 1.0)
                - gammaln(ks + a + b + 1.0)
                - gammaln(ks + 1.0)
            )
            out[..., 1:] *= np.exp(0.5 * (ln_h0 - ln_hk))
    return out


def univariate_orthonormal(family: PolynomialFamily, k: int, x):
    """The degree-k orthonormal polynomial of one family at point(s) x."""
    table = orthonormal_table(family, k, x)
    val = table[..., k]
    return float(val) if np.isscalar(x) or np.asarray(x).ndim == 0 else val


def gauss_rule(family: PolynomialFamily, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes and probability weights (summing to 1) for one family.

    A level-n rule integrates polynomials up to degree 2n-1 exactly against
    the family's probability weight.
    """
    if level < 1:
        raise ValueError("quadrature level must be >= 1")
    if family.kind == "hermite":
        x, w = hermegauss(level)
    elif family.kind == "legendre":
        x, w = leggauss(level)
    elif family.kind == "laguerre":
        x, w = roots_genlaguerre(level, family.alpha)
    else:
        x, w = roots_jacobi(level, family.alpha, family.beta)
    w = np.asarray(w, dtype=float)
    return np.asarray(x, dtype=float), w / w.sum()


def truncation_set(m: int, p: int) -> tuple[tuple[int, ...], ...]:
    """All multi-indices of total degree <= p in graded lexicographic order."""
    if m < 1 or p < 0:
        raise ValueError("need m >= 1 and p >= 0")
    idx = [a for a in iter_product(range(p + 1), repeat=m) if sum(a) <= p]
    idx.sort(key=lambda a: (sum(a), tuple(-c for c in a)))
    return tuple(idx)


@dataclass(frozen=True)
class PceBasis:
    """Tensorized multivariate orthonormal basis over a truncated index set."""

    families: tuple[PolynomialFamily, ...]
    indices: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        m = len(self.families)
        if m < 1:
            raise ValueError("basis needs at least one dimension")
        seen = set()
        for a in self.indices:
            if len(a) != m:
                raise ValueError(f"index {a} does not match dimension {m}")
            if any(c < 0 for c in a):
                raise ValueError(f"negative entry in index {a}")
            if a in seen:
                raise ValueError(f"duplicate index {a}")
            seen.add(a)

    @property
    def dimension(self) -> int:
        return len(self.families)

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def degree(self) -> int:
        return max(sum(a) for a in self.indices)

    def evaluate(self, xi) -> np.ndarray:
        """Basis matrix at basis-space point(s) xi: shape (n, size)."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[1] != self.dimension:
            raise ValueError(f"expected {self.dimension} columns, got {xi.shape}")
        max_deg = [max(a[i] for a in self.indices) for i in range(self.dimension)]
        tables = [
            orthonormal_table(fam, max_deg[i], xi[:, i])
            for i, fam in enumerate(self.families)
        ]
        psi = np.empty((xi.shape[0], self.size))
        for j, a in enumerate(self.indices):
            col = tables[0][:, a[0]].copy()
            for i in range(1, self.dimension):
                if a[i]:
                    col *= tables[i][:, a[i]]
            psi[:, j] = col
        return psi

    def eval_index(self, alpha: tuple[int, ...], xi) -> np.ndarray | float:
        """One tensorized basis polynomial at basis-space point(s) xi."""
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        pts = np.atleast_2d(xi)
        val = np.ones(pts.shape[0])
        for i, k in enumerate(alpha):
            if k:
                val *= orthonormal_table(self.families[i], k, pts[:, i])[:, k]
        return float(val[0]) if single else val


def _family_for_marginal(marg) -> PolynomialFamily:
    if marg.family in ("gaussian", "lognormal"):
        return PolynomialFamily("hermite")
    if marg.family == "uniform":
        return PolynomialFamily("legendre")
    if marg.family == "gamma":
        return PolynomialFamily("laguerre", alpha=marg.params[0] - 1.0)
    # beta(p, q) on (lo, hi) mapped to (-1, 1): density carries (1-x)^(q-1) (1+x)^(p-1)
    p, q = marg.params[0], marg.params[1]
    return PolynomialFamily("jacobi", alpha=q - 1.0, beta=p - 1.0)


def basis_for(rv: RandomVector, degree: int) -> PceBasis:
    """Total-degree basis matched to the input model.

    Independent inputs get their natural family per marginal; under a
    correlation structure the expansion is built in the independent
    standard-normal coordinates instead, so every dimension is Hermite.
    """
    if rv.is_independent:
        fams = tuple(_family_for_marginal(m) for m in rv.marginals)
    else:
        fams = tuple(PolynomialFamily("hermite") for _ in rv.marginals)
    return PceBasis(families=fams, indices=truncation_set(rv.dimension, degree))


def physical_to_basis(rv: RandomVector, x) -> np.ndarray:
    """Map physical input point(s) to the basis-variable coordinates."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if not rv.is_independent:
        out = np.atleast_2d(rv.to_standard(pts))
        return out[0] if single else out
    out = np.empty_like(pts)
    for i, marg in enumerate(rv.marginals):
        p = marg.params
        col = pts[:, i]
        if marg.family == "gaussian":
            out[:, i] = (col - p[0]) / p[1]
        elif marg.family == "lognormal":
            out[:, i] = (np.log(col) - p[0]) / p[1]
        elif marg.family == "uniform":
            out[:, i] = 2.0 * (col - p[0]) / (p[1] - p[0]) - 1.0
        elif marg.family == "gamma":
            out[:, i] = col / p[1]
        else:  # beta on (lo, hi) -> (-1, 1)
            out[:, i] = 2.0 * (col - p[2]) / (p[3] - p[2]) - 1.0
    return out[0] if single else out


def basis_to_physical(rv: RandomVector, xi) -> np.ndarray:
    """Inverse of :func:`physical_to_basis`."""
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    pts = np.atleast_2d(xi)
    if not rv.is_independent:
        out = np.atleast_2d(rv.from_standard(pts))
        return out[0] if single else out
    out = np.empty_like(pts)
    for i, marg in enumerate(rv.marginals):
        p = marg.params
        col = pts[:, i]
        if marg.family == "gaussian":
            out[:, i] = p[0] + p[1] * col
        elif marg.family == "lognormal":
            out[:, i] = np.exp(p[0] + p[1] * col)
        elif marg.family == "uniform":
            out[:, i] = p[0] + 0.5 * (col + 1.0) * (p[1] - p[0])
        elif marg.family == "gamma":
            out[:, i] = col * p[1]
        else:
            out[:, i] = p[2] + 0.5 * (col + 1.0) * (p[3] - p[2])
    return out[0] if single else out


@dataclass
class PceModel:
    """A fitted expansion: basis, aligned coefficients, and diagnostics."""

    basis: PceBasis
    coefficients: np.ndarray
    rv: RandomVector
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.basis.size,):
            raise ValueError("coefficient count must equal the basis size")

    def predict(self, x) -> np.ndarray | float:
        """Surrogate response at physical point(s) x."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xi = physical_to_basis(self.rv, np.atleast_2d(x))
        vals = self.basis.evaluate(xi) @ self.coefficients
        return float(vals[0]) if single else vals

    def coefficient(self, alpha: tuple[int, ...]) -> float:
        try:
            j = self.basis.indices.index(tuple(alpha))
        except ValueError:
            raise KeyError(f"index {alpha} not in the basis") from None
        return float(self.coefficients[j])

    def to_limit_state(self, name: str = "pce") -> LimitState:
        return LimitState(
            dimension=self.basis.dimension,
            evaluator=lambda x: float(self.predict(x)),
            name=name,
            vector_evaluator=lambda xs: np.asarray(self.predict(xs)),
        )

    def to_json(self) -> str:
        doc = {
            "families": [
                {"kind": f.kind, "alpha": f.alpha, "beta": f.beta}
                for f in self.basis.families
            ],
            "indices": [list(a) for a in self.basis.indices],
            "coefficients": self.coefficients.tolist(),
            "diagnostics": {
                k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                for k, v in self.diagnostics.items()
            },
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def _regression_matrices(rv, basis, points):
    xi = physical_to_basis(rv, points)
    psi = basis.evaluate(xi)
    scale = np.linalg.norm(psi, axis=0)
    if np.any(scale <= 0.0):
        raise FitError("a basis column vanishes on the design")
    return psi, psi / scale, scale


def pce_fit_regression(
    rv: RandomVector,
    basis: PceBasis,
    design: ExperimentalDesign,
) -> PceModel:
    """Least-squares fit of the coefficients on an evaluated design.

    The basis matrix is column-equilibrated and solved by SVD least
    squares; a condition number beyond 1e10 or a rank deficiency raises
    :class:`FitError` (try a larger or redrawn design).  Diagnostics carry
    the normalized empirical error and the analytic leave-one-out error.
    """
    pts, y = design.points, design.responses
    n, p = pts.shape[0], basis.size
    if n < p:
        raise FitError(f"regression needs at least {p} points, got {n}")
    if n < 2 * p:
        warnings.warn(
            f"design size {n} is below twice the basis size {p}; "
            "the fit may be unstable",
            RuntimeWarning,
        )
    psi, psi_eq, scale = _regression_matrices(rv, basis, pts)
    coef_eq, _, rank, sv = np.linalg.lstsq(psi_eq, y, rcond=None)
    if rank < p:
        raise FitError(
            f"rank-deficient basis matrix (rank {rank} < {p}); "
            "increase the design size or redraw it"
        )
    cond = float(sv[0] / sv[-1])
    if cond > _COND_LIMIT:
        raise FitError(
            f"basis matrix ill conditioned (cond {cond:.3g}); "
            "increase the design size or redraw it"
        )
    coef = coef_eq / scale
    resid = y - psi @ coef
    y_var = float(np.var(y))
    emp = float(np.mean(resid**2)) / y_var if y_var > 0.0 else (
        0.0 if np.allclose(resid, 0.0, atol=1e-12) else math.inf
    )
    loo, loo_ok = _loo_from_qr(psi_eq, y, resid, y_var)
    diagnostics = {
        "n_points": n,
        "basis_size": p,
        "cond": cond,
        "empirical_error": emp,
        "loo_error": loo,
    }
    if not loo_ok:
        diagnostics["loo_undefined"] = True
    return PceModel(basis=basis, coefficients=coef, rv=rv, diagnostics=diagnostics)


def _loo_from_qr(a: np.ndarray, y: np.ndarray, resid: np.ndarray, y_var: float):
    """Leave-one-out MSE from the hat-matrix diagonal (single fit)."""
    q, _ = np.linalg.qr(a, mode="reduced")
    leverage = np.sum(q * q, axis=1)
    if np.any(leverage >= 1.0 - 1e-10):
        return math.inf, False
    loo_resid = resid / (1.0 - leverage)
    mse = float(np.mean(loo_resid**2))
    if y_var > 0.0:
        return mse / y_var, True
    return (0.0 if mse < 1e-24 else math.inf), True


def pce_loo_error(
    rv: RandomVector, basis: PceBasis, design: ExperimentalDesign
) -> float:
    """Normalized leave-one-out error of the regression fit on a design.

    Computed exactly from one fit via the hat matrix; no refits.  Infinite
    when some design point has leverage 1 (LOO undefined there).
    """
    model = pce_fit_regression(rv, basis, design)
    return float(model.diagnostics["loo_error"])


def pce_fit_projection(
    func,
    rv: RandomVector,
    basis: PceBasis,
    quad_level: int,
    ledger: EvalLedger | None = None,
) -> PceModel:
    """Coefficients by tensorized Gauss quadrature of the projections.

    ``func`` is a :class:`LimitState` or a vectorized callable on physical
    points.  Exact whenever func times each basis polynomial has per-axis
    degree at most 2*quad_level - 1.  The full grid has quad_level**M
    nodes; budgets beyond 1e6 nodes are rejected.
    """
    m = basis.dimension
    if quad_level < 1:
        raise ValueError("quad_level must be >= 1")
    if float(quad_level) ** m > _GRID_LIMIT:
        raise ValueError(
            f"tensor grid {quad_level}^{m} exceeds the {_GRID_LIMIT:.0e}-node budget"
        )
    rules = [gauss_rule(fam, quad_level) for fam in basis.families]
    grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    xi = np.column_stack([g.ravel() for g in grids])
    wgrids = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    w = np.ones(xi.shape[0])
    for g in wgrids:
        w *= g.ravel()
    x = basis_to_physical(rv, xi)
    if isinstance(func, LimitState):
        vals = evaluate_batch(func, x, ledger=ledger)
    else:
        vals = np.asarray(func(x), dtype=float).reshape(xi.shape[0])
    psi = basis.evaluate(xi)
    coef = psi.T @ (w * vals)
    return PceModel(
        basis=basis,
        coefficients=coef,
        rv=rv,
        diagnostics={"quad_level": quad_level, "n_nodes": xi.shape[0]},
    )


def pce_moments(model: PceModel) -> tuple[float, float]:
    """Mean and variance of the surrogate from its coefficients.

    Orthonormality makes these exact: the mean is the constant-term
    coefficient and the variance is the sum of squares of all others.
    """
    zero = tuple([0] * model.basis.dimension)
    mean = 0.0
    var = 0.0
    for a, c in zip(model.basis.indices, model.coefficients):
        if a == zero:
            mean = float(c)
        else:
            var += float(c) * float(c)
    return mean, var


def pce_pf(
    model: PceModel,
    rv: RandomVector,
    n: int,
    seed=None,
    batch: int = 100_000,
) -> ReliabilityResult:
    """Failure probability of the surrogate by crude Monte Carlo.

    Zero true-model calls: only the fitted expansion is sampled.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    nf = 0
    done = 0
    while done < n:
        k = min(batch, n - done)
        xs = rv.sample(k, scheme="monte_carlo", seed=rng)
        nf += int(np.count_nonzero(np.asarray(model.predict(xs)) <= 0.0))
        done += k
    pf = nf / n
    cov = mc_cov(pf, n) if 0.0 < pf < 1.0 else (math.inf if nf == 0 else 0.0)
    return ReliabilityResult(
        pf=pf, cov=cov, n_calls=0, method="pce", extras={"n_surrogate": n}
    )


def pce_adaptive(
    ls: LimitState,
    rv: RandomVector,
    target_err: float,
    p_max: int,
    seed=None,
    ledger: EvalLedger | None = None,
    threads: int = 1,
) -> PceModel:
    """Raise the expansion degree until the leave-one-out error is small.

    For p = 1, 2, ... the design is grown to twice the basis size (new
    points from a fresh space-filling draw, earlier evaluations kept) and
    the expansion refitted.  Stops at the first degree whose LOO error
    meets ``target_err``; past ``p_max`` the best model so far is returned
    with ``diagnostics['converged'] = False``.
    """
    if target_err <= 0.0:
        raise ValueError("target_err must be > 0")
    if p_max < 1:
        raise ValueError("p_max must be >= 1")
    rng = make_rng(seed)
    pts: np.ndarray | None = None
    resp: np.ndarray | None = None
    best: PceModel | None = None
    best_err = math.inf
    total_calls = 0
    for p in range(1, p_max + 1):
        basis = basis_for(rv, p)
        n_target = 2 * basis.size
        have = 0 if pts is None else pts.shape[0]
        if n_target > have:
            new = rv.sample(n_target - have, scheme="latin_hypercube", seed=rng)
            gnew = evaluate_batch(ls, new, ledger=ledger, threads=threads)
            total_calls += n_target - have
            pts = new if pts is None else np.vstack([pts, new])
            resp = gnew if resp is None else np.concatenate([resp, gnew])
        try:
            model = pce_fit_regression(rv, basis, ExperimentalDesign(pts, resp))
        except FitError:
            continue
        err = model.diagnostics["loo_error"]
        model.diagnostics["degree"] = p
        model.diagnostics["n_true_calls"] = total_calls
        if err < best_err:
            best, best_err = model, err
        if err <= target_err:
            model.diagnostics["converged"] = True
            return model
    if best is None:
        raise FitError("no degree up to p_max produced a usable fit")
    best.diagnostics["converged"] = False
    return best
