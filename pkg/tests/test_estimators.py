"""Sampling estimators, moment-based indices and FORM."""

import math

import numpy as np
import pytest
from scipy.special import ndtr, ndtri
from scipy import stats

from reliakit import (
    ConditioningError,
    EstimatorError,
    EvalLedger,
    InstrumentalDensity,
    IterationError,
    LimitState,
    Marginal,
    RandomVector,
    ReliabilityResult,
    benchmark_linear,
    benchmark_waarts,
    cornell_index,
    estimate_is,
    estimate_mc,
    form,
    mc_cov,
    standard_normal_vector,
)


class TestReliabilityResult:
    def test_beta_from_pf(self):
        assert ReliabilityResult(0.5, 0.0, 0, "mc").beta == pytest.approx(0.0)
        assert ReliabilityResult(float(ndtr(-2.0)), 0.0, 0, "mc").beta == pytest.approx(2.0)
        assert ReliabilityResult(0.0, 0.0, 0, "mc").beta == math.inf
        assert ReliabilityResult(1.0, 0.0, 0, "mc").beta == -math.inf

    def test_to_dict_cleans_nonfinite(self):
        r = ReliabilityResult(0.0, float("nan"), 5, "mc", extras={"a": np.arange(3)})
        d = r.to_dict()
        assert d["beta"] is None
        assert d["cov"] is None
        assert d["extras"]["a"] == [0, 1, 2]


class TestMcCov:
    def test_reference_value(self):
        assert mc_cov(1e-2, 10_000) == pytest.approx(math.sqrt(0.99 / 100.0))
        assert mc_cov(1e-2, 10_000) == pytest.approx(0.0995, abs=5e-4)

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            mc_cov(0.0, 100)
        with pytest.raises(ValueError):
            mc_cov(0.5, 0)


class TestMonteCarlo:
    def test_halfspace_within_three_sigma(self):
        ls = benchmark_linear(1.0, dimension=1)
        rv = standard_normal_vector(1)
        res = estimate_mc(ls, rv, 200_000, seed=0)
        pf = float(ndtr(-1.0))
        assert abs(res.pf - pf) <= 3.0 * pf * mc_cov(pf, 200_000)
        assert res.n_calls == 200_000
        assert res.method == "mc"

    def test_no_failures_flagged(self):
        ls = benchmark_linear(8.0, dimension=1)
        rv = standard_normal_vector(1)
        with pytest.warns(RuntimeWarning):
            res = estimate_mc(ls, rv, 1000, seed=1)
        assert res.pf == 0.0
        assert res.extras.get("no_failures") is True

    def test_ledger_counts_every_sample(self):
        ledger = EvalLedger()
        estimate_mc(benchmark_waarts(), standard_normal_vector(2), 5000, seed=2, ledger=ledger)
        assert ledger.count == 5000

    def test_deterministic(self):
        ls = benchmark_waarts()
        rv = standard_normal_vector(2)
        a = estimate_mc(ls, rv, 40_000, seed=7)
        b = estimate_mc(ls, rv, 40_000, seed=7)
        assert a.pf == b.pf and a.cov == b.cov


class TestImportanceSampling:
    def test_centered_at_design_point_recovers_pf(self):
        beta0 = 3.0
        ls = benchmark_linear(beta0, dimension=2)
        rv = standard_normal_vector(2)
        h = InstrumentalDensity.gaussian_centered(np.array([beta0, 0.0]))
        res = estimate_is(ls, h, rv.joint_pdf, 20_000, seed=0)
        pf = float(ndtr(-beta0))
        assert abs(res.pf - pf) <= 3.0 * res.cov * res.pf
        assert res.cov < mc_cov(pf, 20_000)  # beats crude MC at equal n

    def test_from_random_vector_mirrors_mc(self):
        # h = f makes every weight one, so the estimate is a plain failure rate
        ls = benchmark_linear(1.5, dimension=2)
        rv = standard_normal_vector(2)
        h = InstrumentalDensity.from_random_vector(rv)
        res = estimate_is(ls, h, rv.joint_pdf, 30_000, seed=3)
        assert res.pf == pytest.approx(res.extras["n_failures"] / 30_000, rel=1e-12)
        pf = float(ndtr(-1.5))
        assert abs(res.pf - pf) <= 4.0 * pf * mc_cov(pf, 30_000)

    def test_zero_density_at_failing_sample_raises(self):
        ls = benchmark_linear(1.0, dimension=1)
        rv = standard_normal_vector(1)
        bad = InstrumentalDensity(
            sampler=lambda rng, n: rng.normal(2.0, 1.0, size=(n, 1)),
            density=lambda xs: np.zeros(xs.shape[0]),
        )
        with pytest.raises(EstimatorError):
            estimate_is(ls, bad, rv.joint_pdf, 100, seed=0)

    def test_optimal_linear_weights_are_constant(self):
        beta0 = 2.5
        ls = benchmark_linear(beta0, dimension=2)
        rv = standard_normal_vector(2)
        h = InstrumentalDensity.linear_optimal(beta0, np.array([1.0, 0.0]))
        res = estimate_is(ls, h, rv.joint_pdf, 2000, seed=5)
        assert res.pf == pytest.approx(float(ndtr(-beta0)), rel=1e-12)
        assert res.cov == pytest.approx(0.0, abs=1e-12)

    def test_optimal_sampler_matches_conditional_law(self):
        # axial coordinate must follow the normal truncated to [beta0, inf)
        beta0 = 2.0
        h = InstrumentalDensity.linear_optimal(beta0, np.array([0.0, 1.0]))
        xs = h.sampler(np.random.default_rng(8), 20_000)
        axial = xs[:, 1]
        assert axial.min() >= beta0
        res = stats.kstest(axial, stats.truncnorm(beta0, np.inf).cdf)
        assert res.pvalue > 0.01


class TestCornell:
    def test_linear_reference(self):
        # g = x1 - x2 with means (8, 3), unit stds: beta = 5/sqrt(2)
        ls = LimitState(2, lambda x: x[0] - x[1])
        rv = RandomVector((Marginal.gaussian(8.0, 1.0), Marginal.gaussian(3.0, 1.0)))
        res = cornell_index(ls, rv)
        assert res.beta == pytest.approx(5.0 / math.sqrt(2.0), abs=1e-6)

    def test_correlated_linear_oracle(self):
        corr = np.array([[1.0, 0.5], [0.5, 1.0]])
        rv = RandomVector((Marginal.gaussian(4.0, 2.0), Marginal.gaussian(1.0, 1.0)), corr)
        a = np.array([1.0, -2.0])
        ls = LimitState(2, lambda x: a @ x + 1.0)
        res = cornell_index(ls, rv)
        mu = a @ rv.means() + 1.0
        sd = math.sqrt(a @ rv.covariance() @ a)
        assert res.beta == pytest.approx(mu / sd, abs=1e-6)
        assert res.pf == pytest.approx(float(ndtr(-mu / sd)), rel=1e-5)

    def test_constant_function_raises(self):
        ls = LimitState(2, lambda x: 4.0)
        with pytest.raises(ConditioningError):
            cornell_index(ls, standard_normal_vector(2))

    def test_waarts_origin_gradient_degenerate(self):
        # branch symmetry makes the central-difference gradient vanish at the
        # mean, so the first-order index is undefined there
        with pytest.raises(ConditioningError):
            cornell_index(benchmark_waarts(), standard_normal_vector(2))

    def test_ledger_charged(self):
        ledger = EvalLedger()
        cornell_index(benchmark_linear(2.0, dimension=2), standard_normal_vector(2), ledger=ledger)
        assert ledger.count == 5  # center + two per input


class TestForm:
    @pytest.mark.parametrize("beta0", [1.0, 2.0, 3.0, 4.0])
    def test_linear_exact(self, beta0):
        ls = benchmark_linear(beta0, dimension=2)
        res = form(ls, standard_normal_vector(2))
        assert res.beta == pytest.approx(beta0, abs=1e-6)
        assert res.pf == pytest.approx(float(ndtr(-beta0)), rel=1e-5)

    def test_quadratic_known_design_point(self):
        # g(u) = 3 - u1 + 0.1 u2^2 has its nearest failure point at (3, 0)
        ls = LimitState(2, lambda u: 3.0 - u[0] + 0.1 * u[1] ** 2)
        res = form(ls, standard_normal_vector(2))
        assert res.beta == pytest.approx(3.0, abs=1e-6)
        np.testing.assert_allclose(res.extras["design_point_u"], [3.0, 0.0], atol=1e-5)

    def test_physical_design_point_reported(self):
        rv = RandomVector((Marginal.lognormal(0.0, 0.25), Marginal.gaussian(1.0, 0.5)))
        ls = LimitState(2, lambda x: x[0] - x[1])
        res = form(ls, rv)
        x_star = np.asarray(res.extras["design_point_x"])
        assert ls(x_star) == pytest.approx(0.0, abs=1e-6)
        u_star = rv.to_standard(x_star)
        assert np.linalg.norm(u_star) == pytest.approx(res.extras["beta_hl"], abs=1e-6)

    def test_negative_beta_when_origin_fails(self):
        # g(u) = u1 - 1 fails at the origin; pf = Phi(1)
        ls = LimitState(1, lambda u: u[0] - 1.0)
        res = form(ls, standard_normal_vector(1))
        assert res.beta == pytest.approx(-1.0, abs=1e-6)
        assert res.pf == pytest.approx(float(ndtr(1.0)), rel=1e-6)

    def test_waarts_nearest_branch(self):
        res = form(benchmark_waarts(), standard_normal_vector(2))
        assert res.beta == pytest.approx(3.0, abs=1e-3)

    def test_alignment_of_alpha(self):
        ls = benchmark_linear(2.0, direction=[1.0, 1.0])
        res = form(ls, standard_normal_vector(2))
        alpha = np.asarray(res.extras["alpha"])
        np.testing.assert_allclose(alpha, [1 / math.sqrt(2)] * 2, atol=1e-5)

    def test_no_failure_surface_raises_iteration_error(self):
        ls = LimitState(2, lambda u: 1.0 + u[0] ** 2 + u[1] ** 2)
        with pytest.raises(IterationError) as exc:
            form(ls, standard_normal_vector(2), max_iter=30)
        assert exc.value.last_iterate is not None

    def test_ledger_counts_fd_stencils(self):
        ledger = EvalLedger()
        form(benchmark_linear(2.0, dimension=2), standard_normal_vector(2), ledger=ledger)
        assert ledger.count > 0
