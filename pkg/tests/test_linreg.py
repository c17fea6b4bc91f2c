import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import orthogonal_design
from quickic.core import ICSpec, lambda_ic, selection_condition_diagonal, soft_threshold_diagonal, trace_segments
from quickic.datagen import gen_regression, regression_covariance
from quickic.errors import BudgetExceeded, InvalidArgument, NumericFailure
from quickic.linreg import (
    RegressionData,
    alasso_kkt_residual,
    alasso_path,
    alasso_plus_ic,
    exhaustive_ic_regression,
    gaussian_loglik,
    observed_fisher_linreg,
    ols_full_fit,
    quick_ic_regression,
)


def brute_force_ic(data, lam, ks):
    """Independent best-subset oracle: lstsq per subset, full-model sigma2."""
    sigma2 = ols_full_fit(data).noise_variance
    best = (math.inf, ())
    for k in ks:
        for s in itertools.combinations(range(data.p), k):
            if s:
                coef, *_ = np.linalg.lstsq(data.X[:, s], data.y, rcond=None)
                rss = float(np.sum((data.y - data.X[:, s] @ coef) ** 2))
            else:
                rss = float(data.y @ data.y)
            score = 0.5 * data.n * math.log(2 * math.pi * sigma2) + 0.5 * rss / sigma2 + lam * k
            if score < best[0] - 1e-9:
                best = (score, s)
    return best


class TestOLS:
    def test_noiseless_orthonormal(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((40, 4)))
        theta = np.array([1.0, -2.0, 0.5, 3.0])
        fit = ols_full_fit(RegressionData(q, q @ theta))
        np.testing.assert_allclose(fit.coefficients, theta, atol=1e-12)
        assert fit.noise_variance == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(fit.loglik)

    def test_zero_response(self, rng):
        fit = ols_full_fit(RegressionData(rng.standard_normal((30, 3)), np.zeros(30)))
        np.testing.assert_array_equal(fit.coefficients, 0.0)
        assert fit.noise_variance > 0 and np.isfinite(fit.loglik)

    def test_normal_equations_oracle(self, rng):
        X = rng.standard_normal((200, 5))
        y = X @ rng.standard_normal(5) + rng.standard_normal(200)
        fit = ols_full_fit(RegressionData(X, y))
        ref = np.linalg.lstsq(X, y, rcond=None)[0]
        np.testing.assert_allclose(fit.coefficients, ref, atol=1e-8)
        rss = float(np.sum((y - X @ ref) ** 2))
        assert fit.noise_variance == pytest.approx(rss / 200)
        assert fit.loglik == pytest.approx(gaussian_loglik(rss, 200, rss / 200))

    def test_errors(self, rng):
        X = rng.standard_normal((20, 3))
        with pytest.raises(NumericFailure):
            ols_full_fit(RegressionData(np.column_stack([X, X[:, 0]]), rng.standard_normal(20)))
        with pytest.raises(InvalidArgument):
            ols_full_fit(RegressionData(X[:3], np.zeros(3)))
        with pytest.raises(InvalidArgument):
            RegressionData(X, np.zeros(19))
        with pytest.raises(InvalidArgument):
            RegressionData(np.full((3, 1), np.nan), np.zeros(3))


class TestFisher:
    def test_orthonormal(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((50, 3)))
        X = q * np.sqrt(50)
        np.testing.assert_allclose(observed_fisher_linreg(RegressionData(X, np.zeros(50)), 1.0), 50 * np.eye(3), atol=1e-10)

    def test_homogeneity(self, rng):
        d = RegressionData(rng.standard_normal((30, 3)), rng.standard_normal(30))
        np.testing.assert_allclose(observed_fisher_linreg(d, 3.0), observed_fisher_linreg(d, 1.0) / 3.0)
        with pytest.raises(InvalidArgument):
            observed_fisher_linreg(d, 0.0)

    def test_case2_lln(self):
        n, p = 10000, 20
        rng = np.random.default_rng(7)
        cov = regression_covariance("II", rng, p)
        X = rng.standard_normal((n, p)) @ np.linalg.cholesky(cov).T
        h = observed_fisher_linreg(RegressionData(X, np.zeros(n)), 1.0)
        toeplitz = 0.5 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        np.testing.assert_allclose(h / n, toeplitz, atol=5e-2)


class TestQuickIC:
    def test_orthogonal_coordinatewise(self, rng):
        for _ in range(30):
            d = orthogonal_design(rng, int(rng.integers(50, 300)), int(rng.integers(2, 10)))
            fit = ols_full_fit(d)
            lam = lambda_ic(ICSpec.bic(), d.n)
            hd = np.diag(observed_fisher_linreg(d, fit.noise_variance))
            res = quick_ic_regression(d)
            expect = tuple(i for i in range(d.p) if selection_condition_diagonal(fit.coefficients[i], hd[i], lam))
            assert res.support == expect
            closed = [soft_threshold_diagonal(fit.coefficients[i], hd[i], lam) for i in range(d.p)]
            np.testing.assert_allclose(res.estimate, closed, atol=1e-7)

    def test_zero_lambda_keeps_all(self, rng):
        d = RegressionData(rng.standard_normal((60, 5)), rng.standard_normal(60))
        res = quick_ic_regression(d, ICSpec.custom(0.0))
        assert res.support == tuple(range(5))
        np.testing.assert_allclose(res.estimate, ols_full_fit(d).coefficients, atol=1e-10)

    def test_case2_matches_exhaustive_p10(self):
        hits = 0
        for seed in range(5):
            data, _ = gen_regression("II", 300, seed, p=10)
            q = quick_ic_regression(data)
            e = exhaustive_ic_regression(data)
            hits += q.support == e.support
        assert hits == 5

    def test_trace_nonincreasing(self, rng):
        for seed in range(10):
            data, _ = gen_regression("III", 100, seed)
            for refresh in (False, True):
                res = quick_ic_regression(data, refresh=refresh)
                for seg in trace_segments(res):
                    assert np.all(np.diff(seg) <= 1e-10 * np.abs(seg[:-1]).max())
                off = np.setdiff1d(np.arange(data.p), res.support)
                assert np.all(res.estimate[off] == 0)

    def test_refresh_stable_support(self):
        data, _ = gen_regression("III", 100, 3)
        res = quick_ic_regression(data, refresh=True)
        assert res.converged
        assert res.info["refreshes"] >= 0

    def test_large_lambda_empty(self, rng):
        d = orthogonal_design(rng, 100, 5)
        fit = ols_full_fit(d)
        hd = np.diag(observed_fisher_linreg(d, fit.noise_variance))
        lam = 0.5 * float(np.max(hd * fit.coefficients**2)) * 1.01
        assert quick_ic_regression(d, ICSpec.custom(lam)).support == ()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.1, 50.0))
    def test_joint_rescaling(self, seed, c):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((60, 6))
        y = X @ (rng.standard_normal(6) * (rng.random(6) < 0.5)) + rng.standard_normal(60)
        a = quick_ic_regression(RegressionData(X, y))
        b = quick_ic_regression(RegressionData(c * X, c * y))
        assert a.support == b.support


class TestExhaustive:
    def test_full_model_only(self, rng):
        d = RegressionData(rng.standard_normal((40, 4)), rng.standard_normal(40))
        assert exhaustive_ic_regression(d, ICSpec.bic(), 4, 4).support == (0, 1, 2, 3)

    def test_noiseless_pair(self, rng):
        X = rng.standard_normal((50, 6))
        y = 2.0 * X[:, 1] - 1.5 * X[:, 4] + 1e-3 * rng.standard_normal(50)
        assert exhaustive_ic_regression(RegressionData(X, y), ICSpec.bic(), 1, 3).support == (1, 4)

    def test_candidate_count(self):
        data, _ = gen_regression("I", 100, 0)
        res = exhaustive_ic_regression(data, ICSpec.bic(), 4, 8)
        assert res.info["n_subsets"] == sum(math.comb(20, k) for k in range(4, 9)) == 262599

    def test_brute_force_oracle(self, rng):
        for _ in range(10):
            X = rng.standard_normal((80, 7))
            y = X @ (rng.standard_normal(7) * (rng.random(7) < 0.5)) + rng.standard_normal(80)
            d = RegressionData(X, y)
            res = exhaustive_ic_regression(d)
            score, sup = brute_force_ic(d, lambda_ic(ICSpec.bic(), 80), range(8))
            assert res.support == sup
            assert res.objective == pytest.approx(score, rel=1e-10)

    def test_tie_breaking(self, rng):
        # y orthogonal to every column: all subsets share one RSS, so lambda = 0 ties everything
        X = rng.standard_normal((30, 3))
        z = rng.standard_normal(30)
        y = z - X @ np.linalg.lstsq(X, z, rcond=None)[0]
        d = RegressionData(X, y)
        assert exhaustive_ic_regression(d, ICSpec.custom(0.0), 0, 3).support == ()
        assert exhaustive_ic_regression(d, ICSpec.custom(0.0), 1, 3).support == (0,)
        assert exhaustive_ic_regression(d, ICSpec.custom(0.0), 2, 2).support == (0, 1)

    def test_errors(self, rng):
        d = RegressionData(rng.standard_normal((40, 4)), rng.standard_normal(40))
        with pytest.raises(InvalidArgument):
            exhaustive_ic_regression(d, ICSpec.bic(), 3, 2)
        with pytest.raises(BudgetExceeded):
            exhaustive_ic_regression(d, ICSpec.bic(), 0, 4, budget=5)


class TestALassoPath:
    def test_orthogonal_entry_points(self, rng):
        d = orthogonal_design(rng, 120, 5, noise_sd=0.5)
        fit = ols_full_fit(d)
        path = alasso_path(d)
        hd = np.diag(observed_fisher_linreg(d, fit.noise_variance))
        entries = np.sort(hd * fit.coefficients**2)[::-1]
        np.testing.assert_allclose(np.sort(path.lambdas[1:-1])[::-1], entries[1:], rtol=1e-8)
        assert path.lambdas[0] == pytest.approx(entries[0], rel=1e-8)
        for lam, coef in zip(path.lambdas, path.coefs):
            closed = [soft_threshold_diagonal(fit.coefficients[i], hd[i], lam / 2) for i in range(5)]
            np.testing.assert_allclose(coef, closed, atol=1e-8)

    def test_single_predictor(self, rng):
        x = rng.standard_normal((40, 1))
        path = alasso_path(RegressionData(x, 2 * x[:, 0] + rng.standard_normal(40)))
        assert len(path) == 2
        np.testing.assert_array_equal(path.coefs[0], 0.0)
        np.testing.assert_allclose(path.coefs[-1], path.theta_hat)

    def test_final_is_ols(self):
        data, _ = gen_regression("II", 100, 4)
        path = alasso_path(data)
        np.testing.assert_array_equal(path.coefs[-1], ols_full_fit(data).coefficients)
        assert np.all(np.diff(path.lambdas) < 0)

    def test_kkt_all_breakpoints(self, rng):
        for _ in range(10):
            X = rng.standard_normal((50, 6))
            y = X @ rng.standard_normal(6) + rng.standard_normal(50)
            d = RegressionData(X, y)
            path = alasso_path(d)
            assert not path.grid_fallback
            for lam, coef in zip(path.lambdas, path.coefs):
                assert alasso_kkt_residual(d, path, lam, coef) < 1e-6

    def test_sklearn_lars_oracle(self, rng):
        from sklearn.linear_model import lars_path

        for case in ("I", "II", "III"):
            data, _ = gen_regression(case, 100, 11)
            path = alasso_path(data)
            a = np.abs(path.theta_hat)
            alphas, _, coefs = lars_path(data.X * a, data.y, method="lasso")
            ours = path.lambdas * path.sigma2 / data.n
            np.testing.assert_allclose(ours[: alphas.size], alphas, rtol=1e-6, atol=1e-9)
            np.testing.assert_allclose(path.coefs, (coefs * a[:, None]).T, atol=1e-6)


class TestALassoPlusIC:
    def test_single_zero_breakpoint(self, rng):
        d = orthogonal_design(rng, 60, 3)
        path = alasso_path(d)
        path.coefs, path.lambdas = path.coefs[:1], path.lambdas[:1]
        res = alasso_plus_ic(path, d)
        assert res.support == ()
        assert res.objective == pytest.approx(-gaussian_loglik(d.yty, d.n, path.sigma2))

    def test_noiseless_ols_wins(self, rng):
        X = rng.standard_normal((50, 4))
        d = RegressionData(X, X @ np.array([1.0, -1.0, 2.0, 0.5]) + 1e-6 * rng.standard_normal(50))
        res = alasso_plus_ic(alasso_path(d), d)
        assert res.support == (0, 1, 2, 3)

    def test_empty_path(self, rng):
        d = orthogonal_design(rng, 60, 3)
        path = alasso_path(d)
        path.coefs, path.lambdas = path.coefs[:0], path.lambdas[:0]
        with pytest.raises(InvalidArgument):
            alasso_plus_ic(path, d)


def test_quick_faster_than_exhaustive():
    data, _ = gen_regression("II", 100, 0)
    t0 = time.perf_counter()
    quick_ic_regression(data)
    t1 = time.perf_counter()
    exhaustive_ic_regression(data, ICSpec.bic(), 4, 8)
    t2 = time.perf_counter()
    assert t1 - t0 < t2 - t1
