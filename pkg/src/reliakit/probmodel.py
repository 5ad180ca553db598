"""Probabilistic input models.

A joint input model is a :class:`RandomVector`: a list of independent
marginals plus an optional Gaussian-copula correlation matrix.  The module
provides the isoprobabilistic transform between physical coordinates and
independent standard normal coordinates, joint density evaluation, and
Monte Carlo / Latin Hypercube sampling.

All randomness flows through ``numpy.random.Generator`` seeded with the
PCG64 bit generator (``numpy.random.default_rng``), so results are
bit-reproducible for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import cholesky, solve_triangular
from scipy.special import ndtr, ndtri

from .errors import DomainError, ModelError

__all__ = [
    "Marginal",
    "RandomVector",
    "standard_normal_vector",
    "make_rng",
]

_FAMILIES = ("gaussian", "uniform", "lognormal", "gamma", "beta")

# Probabilities are clipped to this band before applying the normal quantile,
# so deep-tail points map to large-but-finite standard coordinates.
_P_LO = 1e-300
_P_HI = 1.0 - 1e-16


def make_rng(seed) -> np.random.Generator:
    """Return a PCG64 generator; passes through an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class Marginal:
    """A univariate input distribution.

    Supported families and parameter layout:

    ==========  ======================================
    gaussian    (mean, std)
    uniform     (lower, upper)
    lognormal   (mu_log, sigma_log) of the underlying normal
    gamma       (shape, scale)
    beta        (alpha, beta, lower, upper)
    ==========  ======================================

    Use the family classmethods rather than the raw constructor.
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ModelError(f"unknown marginal family {self.family!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        p = self.params
        if self.family == "gaussian":
            if len(p) != 2 or p[1] <= 0:
                raise ModelError("gaussian marginal needs (mean, std) with std > 0")
        elif self.family == "uniform":
            if len(p) != 2 or p[1] <= p[0]:
                raise ModelError("uniform marginal needs (lower, upper) with upper > lower")
        elif self.family == "lognormal":
            if len(p) != 2 or p[1] <= 0:
                raise ModelError("lognormal marginal needs (mu_log, sigma_log) with sigma_log > 0")
        elif self.family == "gamma":
            if len(p) != 2 or p[0] <= 0 or p[1] <= 0:
                raise ModelError("gamma marginal needs (shape, scale), both > 0")
        elif self.family == "beta":
            if len(p) != 4 or p[0] <= 0 or p[1] <= 0 or p[3] <= p[2]:
                raise ModelError("beta marginal needs (alpha, beta, lower, upper)")

    # -- constructors ------------------------------------------------------

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "Marginal":
        return cls("gaussian", (mean, std))

    @classmethod
    def uniform(cls, lower: float, upper: float) -> "Marginal":
        return cls("uniform", (lower, upper))

    @classmethod
    def lognormal(cls, mu_log: float, sigma_log: float) -> "Marginal":
        """Lognormal with underlying normal N(mu_log, sigma_log^2)."""
        return cls("lognormal", (mu_log, sigma_log))

    @classmethod
    def gamma(cls, shape: float, scale: float = 1.0) -> "Marginal":
        return cls("gamma", (shape, scale))

    @classmethod
    def beta(cls, alpha: float, beta: float, lower: float = 0.0, upper: float = 1.0) -> "Marginal":
        return cls("beta", (alpha, beta, lower, upper))

    # -- distribution interface -------------------------------------------

    @cached_property
    def dist(self):
        """Frozen scipy.stats distribution backing this marginal."""
        p = self.params
        if self.family == "gaussian":
            return stats.norm(loc=p[0], scale=p[1])
        if self.family == "uniform":
            return stats.uniform(loc=p[0], scale=p[1] - p[0])
        if self.family == "lognormal":
            return stats.lognorm(s=p[1], scale=math.exp(p[0]))
        if self.family == "gamma":
            return stats.gamma(a=p[0], scale=p[1])
        return stats.beta(a=p[0], b=p[1], loc=p[2], scale=p[3] - p[2])

    @property
    def support(self) -> tuple[float, float]:
        lo, hi = self.dist.support()
        return float(lo), float(hi)

    def pdf(self, x):
        return self.dist.pdf(x)

    def cdf(self, x):
        return self.dist.cdf(x)

    def quantile(self, p):
        return self.dist.ppf(p)

    def mean(self) -> float:
        return float(self.dist.mean())

    def std(self) -> float:
        return float(self.dist.std())

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "Marginal":
        return cls(d["family"], tuple(d["params"]))


def _as_correlation(corr, m: int) -> np.ndarray | None:
    """Validate a correlation matrix; None means independence."""
    if corr is None:
        return None
    c = np.asarray(corr, dtype=float)
    if c.shape != (m, m):
        raise ModelError(f"correlation must be {m}x{m}, got {c.shape}")
    if not np.allclose(c, c.T, atol=1e-12):
        raise ModelError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(c), 1.0, atol=1e-12):
        raise ModelError("correlation matrix must have unit diagonal")
    if np.allclose(c, np.eye(m), atol=1e-14):
        return None
    try:
        cholesky(c, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises LinAlgError
        raise ModelError("correlation matrix is not positive definite") from exc
    except Exception as exc:
        raise ModelError("correlation matrix is not positive definite") from exc
    return c


@dataclass(frozen=True, eq=False)
class RandomVector:
    """Joint input model: independent marginals + Gaussian-copula correlation.

    The isoprobabilistic transform maps physical coordinates x to
    independent standard normal coordinates u:

        z_i = PhiInv(F_i(x_i)),   u = L^-1 z

    where L is the lower Cholesky factor of the copula correlation matrix
    (L = I for independent inputs).  ``from_standard`` is the exact inverse.
    """

    marginals: tuple[Marginal, ...]
    correlation: np.ndarray | None = None

    def __post_init__(self):
        margs = tuple(self.marginals)
        if len(margs) < 1:
            raise ModelError("RandomVector needs at least one marginal")
        object.__setattr__(self, "marginals", margs)
        corr = _as_correlation(self.correlation, len(margs))
        object.__setattr__(self, "correlation", corr)

    @property
    def dimension(self) -> int:
        return len(self.marginals)

    @property
    def is_independent(self) -> bool:
        return self.correlation is None

    @cached_property
    def _chol(self) -> np.ndarray | None:
        if self.correlation is None:
            return None
        return cholesky(self.correlation, lower=True)

    # -- transforms --------------------------------------------------------

    def to_standard(self, x) -> np.ndarray:
        """Map physical point(s) to independent standard normal coordinates.

        Accepts a single point of shape (M,) or a batch (n, M); raises
        :class:`DomainError` if any component lies outside the open support
        of its marginal.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        self._check_dim(pts)
        z = np.empty_like(pts)
        for i, marg in enumerate(self.marginals):
            lo, hi = marg.support
            col = pts[:, i]
            if np.any(col <= lo) or np.any(col >= hi):
                raise DomainError(
                    f"component {i} outside open support ({lo}, {hi}) of {marg.family}"
                )
            # Gaussian-type marginals map by arithmetic; the generic CDF
            # path is kept for the rest.
            p = marg.params
            if marg.family == "gaussian":
                z[:, i] = (col - p[0]) / p[1]
            elif marg.family == "lognormal":
                z[:, i] = (np.log(col) - p[0]) / p[1]
            else:
                z[:, i] = ndtri(np.clip(marg.cdf(col), _P_LO, _P_HI))
        if self._chol is not None:
            z = solve_triangular(self._chol, z.T, lower=True).T
        return z[0] if single else z

    def from_standard(self, u) -> np.ndarray:
        """Inverse isoprobabilistic transform (standard normal -> physical)."""
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        pts = np.atleast_2d(u)
        self._check_dim(pts)
        if not np.all(np.isfinite(pts)):
            raise DomainError("standard-space point has non-finite components")
        z = pts @ self._chol.T if self._chol is not None else pts
        x = np.empty_like(z)
        for i, marg in enumerate(self.marginals):
            p = marg.params
            if marg.family == "gaussian":
                x[:, i] = p[0] + p[1] * z[:, i]
            elif marg.family == "lognormal":
                x[:, i] = np.exp(p[0] + p[1] * z[:, i])
            elif marg.family == "uniform":
                x[:, i] = p[0] + (p[1] - p[0]) * ndtr(z[:, i])
            else:
                x[:, i] = marg.quantile(ndtr(z[:, i]))
        if not np.all(np.isfinite(x)):
            raise OverflowError("inverse transform overflowed the marginal range")
        return x[0] if single else x

    # -- densities ---------------------------------------------------------

    def joint_pdf(self, x) -> np.ndarray | float:
        """Joint density at point(s) x; zero outside the support."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        self._check_dim(pts)
        dens = np.ones(pts.shape[0])
        for i, marg in enumerate(self.marginals):
            dens *= marg.pdf(pts[:, i])
        if self._chol is not None:
            dens *= self._copula_density(pts)
        out = np.where(np.isfinite(dens), dens, 0.0)
        return float(out[0]) if single else out

    def _copula_density(self, pts: np.ndarray) -> np.ndarray:
        z = np.empty_like(pts)
        inside = np.ones(pts.shape[0], dtype=bool)
        for i, marg in enumerate(self.marginals):
            p = marg.cdf(pts[:, i])
            inside &= (p > 0.0) & (p < 1.0)
            z[:, i] = ndtri(np.clip(p, _P_LO, _P_HI))
        L = self._chol
        y = solve_triangular(L, z.T, lower=True).T
        quad = np.einsum("ij,ij->i", y, y) - np.einsum("ij,ij->i", z, z)
        dens = np.exp(-0.5 * quad) / np.prod(np.diag(L))
        dens[~inside] = 0.0
        return dens

    # -- moments -----------------------------------------------------------

    def means(self) -> np.ndarray:
        return np.array([m.mean() for m in self.marginals])

    def stds(self) -> np.ndarray:
        return np.array([m.std() for m in self.marginals])

    def covariance(self) -> np.ndarray:
        """Covariance matrix D C D with D = diag(marginal stds).

        Exact for Gaussian marginals; for non-Gaussian marginals under the
        Gaussian copula this treats the copula correlation as the
        product-moment correlation, which is the usual first-order model.
        """
        d = self.stds()
        c = np.eye(self.dimension) if self.correlation is None else self.correlation
        return np.outer(d, d) * c

    # -- sampling ----------------------------------------------------------

    def sample(self, n: int, scheme: str = "monte_carlo", seed=None) -> np.ndarray:
        """Draw n rows of X.

        ``scheme``:
          * ``"monte_carlo"`` -- independent draws.
          * ``"latin_hypercube"`` -- one point in each of the n equiprobable
            strata of every marginal; for correlated inputs the
            stratification applies to the independent copula coordinates.

        Deterministic for a given integer seed.
        """
        if n < 1:
            raise ValueError("sample size must be >= 1")
        rng = make_rng(seed)
        m = self.dimension
        if scheme in ("monte_carlo", "mc"):
            u = rng.standard_normal((n, m))
            return self.from_standard(u)
        if scheme in ("latin_hypercube", "lhs"):
            p = np.empty((n, m))
            for j in range(m):
                p[:, j] = (rng.permutation(n) + rng.random(n)) / n
            if self.is_independent:
                x = np.empty((n, m))
                for j, marg in enumerate(self.marginals):
                    x[:, j] = marg.quantile(p[:, j])
                return x
            return self.from_standard(ndtri(np.clip(p, _P_LO, _P_HI)))
        raise ValueError(f"unknown sampling scheme {scheme!r}")

    def _check_dim(self, pts: np.ndarray):
        if pts.ndim != 2 or pts.shape[1] != self.dimension:
            raise ValueError(
                f"expected points with {self.dimension} columns, got shape {pts.shape}"
            )

    def to_dict(self) -> dict:
        return {
            "marginals": [m.to_dict() for m in self.marginals],
            "correlation": None if self.correlation is None else self.correlation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomVector":
        corr = d.get("correlation")
        return cls(
            tuple(Marginal.from_dict(m) for m in d["marginals"]),
            None if corr is None else np.asarray(corr, dtype=float),
        )


def standard_normal_vector(m: int) -> RandomVector:
    """Independent standard normal inputs of dimension m."""
    return RandomVector(tuple(Marginal.gaussian(0.0, 1.0) for _ in range(m)))
