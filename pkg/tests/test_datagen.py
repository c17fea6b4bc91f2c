import numpy as np
import pytest

from quickic.datagen import (
    N_NONZERO,
    P_REGRESSION,
    REG_NOISE_VAR,
    TRIANGLE_COV,
    TrialSeed,
    gen_fa,
    gen_mfa,
    gen_regression,
    gen_spiral,
    gen_triangle,
    gen_two_gaussians,
    read_csv,
    regression_covariance,
    triangle_geometry,
    write_csv,
)
from quickic.errors import InvalidArgument


def corr(X):
    return np.corrcoef(X, rowvar=False)


class TestTrialSeed:
    def test_reproducible(self):
        a = TrialSeed(2**63 + 5, "fa").rng().standard_normal(4)
        b = TrialSeed(2**63 + 5, "fa").rng().standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = TrialSeed(1, "fa").rng().standard_normal(4)
        b = TrialSeed(1, "spiral").rng().standard_normal(4)
        assert not np.allclose(a, b)

    def test_generators_deterministic(self):
        assert gen_spiral(100, seed=3).tobytes() == gen_spiral(100, seed=3).tobytes()
        assert gen_fa(50, 3).tobytes() == gen_fa(50, 3).tobytes()
        assert not np.array_equal(gen_fa(50, 3), gen_fa(50, 4))


class TestRegression:
    @pytest.mark.parametrize("case", ["I", "II", "III"])
    def test_coefficients(self, case):
        for seed in range(20):
            data, theta = gen_regression(case, 100, seed)
            assert theta.size == P_REGRESSION and np.sum(theta == 0) == 14
            nz = np.abs(theta[theta != 0])
            assert nz.size == N_NONZERO and np.all((nz >= 0.2) & (nz <= 2.5))

    def test_case_one_orthogonal(self):
        data, _ = gen_regression("I", 100_000, 0)
        off = corr(data.X) - np.eye(P_REGRESSION)
        assert np.max(np.abs(off)) < 0.02

    def test_case_two_correlation(self):
        data, _ = gen_regression("II", 100_000, 1)
        assert corr(data.X)[0, 1] == pytest.approx(0.5, abs=0.02)

    def test_unit_variance(self):
        for case in "I", "II", "III":
            data, _ = gen_regression(case, 200, 2)
            np.testing.assert_allclose(data.X.var(axis=0), 1.0, atol=1e-10)

    def test_case_three_covariance(self):
        cov = regression_covariance("III", np.random.default_rng(0))
        np.testing.assert_allclose(np.diag(cov), 1.0)
        assert np.linalg.eigvalsh(cov)[0] > 0

    def test_noise_variance(self):
        data, theta = gen_regression("I", 100_000, 4)
        resid = data.y - data.X @ theta
        assert resid.var() == pytest.approx(REG_NOISE_VAR, rel=0.02)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            gen_regression("I", 20, 0)
        with pytest.raises(ValueError):
            gen_regression("IV", 100, 0)


class TestFA:
    def test_population_covariance(self):
        X, truth = gen_fa(100_000, 0, return_truth=True)
        assert X.shape == (100_000, 10)
        np.testing.assert_allclose(np.cov(X, rowvar=False), truth.covariance, atol=5e-2)
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=2e-2)

    def test_design_ranges(self):
        for seed in range(10):
            X, truth = gen_fa(30, seed, return_truth=True)
            assert X.shape == (30, 10) and truth.loading.shape == (10, 5)
            assert np.all(np.abs(truth.loading) <= 1.5)
            assert np.all((truth.noise_vars > 0) & (truth.noise_vars < 1))

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            gen_fa(10, 0)


class TestSpiral:
    def test_noise_free_identity(self):
        X = gen_spiral(500, noise_sd=0.0, seed=1)
        np.testing.assert_allclose(X[:, 0] ** 2 + X[:, 1] ** 2, (13 - 0.5 * X[:, 2]) ** 2, rtol=1e-12)

    def test_moments(self):
        X = gen_spiral(200_000, seed=2)
        assert X.shape[1] == 3
        assert X[:, 2].mean() == pytest.approx(2 * np.pi, abs=0.03)
        assert gen_spiral(seed=0).shape == (900, 3)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            gen_spiral(10)


class TestTriangle:
    def test_cluster_covariances(self):
        X, lab = gen_triangle(300_000, 0, return_labels=True)
        _, rots = triangle_geometry()
        for i, r in enumerate(rots):
            np.testing.assert_allclose(np.cov(X[lab == i], rowvar=False), r @ TRIANGLE_COV @ r.T, atol=5e-2)

    def test_split_and_centroid(self):
        X, lab = gen_triangle(600, 1, return_labels=True)
        assert np.bincount(lab).tolist() == [200, 200, 200]
        big = gen_triangle(300_000, 2)
        centers, _ = triangle_geometry()
        np.testing.assert_allclose(big.mean(axis=0), centers.mean(axis=0), atol=2e-2)

    def test_equilateral(self):
        centers, _ = triangle_geometry(5.0)
        dist = [np.linalg.norm(centers[i] - centers[j]) for i, j in ((0, 1), (1, 2), (0, 2))]
        np.testing.assert_allclose(dist, 5.0)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            gen_triangle(100, 0)


class TestTwoGaussians:
    def test_halves(self):
        X, lab = gen_two_gaussians(400, seed=0, return_labels=True)
        assert X.shape == (400, 1)
        assert X[lab == 0].mean() == pytest.approx(-10, abs=0.3)
        assert X[lab == 1].mean() == pytest.approx(10, abs=0.3)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            gen_two_gaussians(5)


class TestMFA:
    def test_within_cluster_covariance(self):
        X, truth = gen_mfa(200_000, 2, [2, 1], seed=0, return_truth=True)
        for i in range(2):
            pts = X[truth.labels == i]
            np.testing.assert_allclose(pts.mean(axis=0), truth.means[i], atol=3e-2)
            np.testing.assert_allclose(np.cov(pts, rowvar=False), truth.covariance(i), atol=5e-2)

    def test_separation(self):
        _, truth = gen_mfa(10, 3, [1, 1, 1], separation=7.0, seed=1, return_truth=True)
        for i, j in ((0, 1), (1, 2), (0, 2)):
            assert np.linalg.norm(truth.means[i] - truth.means[j]) == pytest.approx(7.0)

    def test_single_analyzer_zero_mean(self):
        X, truth = gen_mfa(100_000, 1, [2], seed=2, return_truth=True)
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=3e-2)
        assert np.all(np.abs(truth.loadings[0]) <= 1.5) and np.all(truth.noise_vars < 0.5)

    def test_far_apart_nearest_mean(self):
        X, truth = gen_mfa(2000, 2, [1, 1], separation=200.0, seed=3, return_truth=True)
        near = np.argmin(((X[:, None, :] - truth.means[None]) ** 2).sum(axis=2), axis=1)
        np.testing.assert_array_equal(near, truth.labels)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            gen_mfa(10, 2, [1])
        with pytest.raises(InvalidArgument):
            gen_mfa(10, 1, [6])


def test_csv_round_trip(tmp_path):
    X = np.random.default_rng(0).standard_normal((7, 3)) * 1e5
    path = write_csv(tmp_path / "sub" / "x.csv", X)
    assert path.read_text().splitlines()[0] == "x1,x2,x3"
    np.testing.assert_array_equal(read_csv(path), X)
