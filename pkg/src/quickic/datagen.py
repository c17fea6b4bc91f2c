"""Seeded synthetic data for the regression, FA, GMM and MFA studies."""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .linreg import RegressionData

P_REGRESSION = 6 + 14
N_NONZERO = 6
REG_NOISE_VAR = 0.5


@dataclass(frozen=True)
class TrialSeed:
    """A 64-bit seed plus a label naming the consumer of the stream.

    Equal ``(seed, stream)`` pairs give bit-identical draws on one platform.
    """

    seed: int
    stream: str = ""

    def rng(self) -> np.random.Generator:
        key = (zlib.crc32(self.stream.encode()),) if self.stream else ()
        ss = np.random.SeedSequence(int(self.seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
        return np.random.default_rng(ss)


def _rng(seed, stream: str) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, TrialSeed):
        return seed.rng()
    return TrialSeed(int(seed), stream).rng()


class RegressionCase(str, enum.Enum):
    I = "I"
    II = "II"
    III = "III"


def regression_covariance(case, rng: np.random.Generator, p: int = P_REGRESSION) -> np.ndarray:
    """Population correlation matrix of the predictors for one case."""
    case = RegressionCase(case)
    if case is RegressionCase.I:
        return np.eye(p)
    if case is RegressionCase.II:
        idx = np.arange(p)
        return 0.5 ** np.abs(idx[:, None] - idx[None, :])
    m = rng.uniform(-0.5, 0.5, size=(p, p))
    cov = m @ m.T
    s = np.sqrt(np.diag(cov))
    return cov / np.outer(s, s)


def gen_regression(case, n: int, seed, *, p: int = P_REGRESSION):
    """Draw one regression data set and its true coefficient vector.

    Six coefficients are nonzero with magnitudes uniform on [0.2, 2.5] and
    random signs; the rest are zero. The predictors are built so that their
    sample covariance (divisor n) equals the case's correlation matrix
    exactly: centered Gaussian draws are whitened, then colored by the
    Cholesky factor. Case I is thus an exactly orthogonal design with unit
    sample variances. The response is centered.
    """
    if n < 30:
        raise InvalidArgument("gen_regression needs n >= 30")
    if n <= p:
        raise InvalidArgument("gen_regression needs n > p")
    rng = _rng(seed, "regression")
    cov = regression_covariance(case, rng, p)
    theta = np.zeros(p)
    pos = rng.choice(p, size=N_NONZERO, replace=False)
    theta[pos] = rng.uniform(0.2, 2.5, size=N_NONZERO) * rng.choice([-1.0, 1.0], size=N_NONZERO)
    z = rng.standard_normal((n, p))
    z -= z.mean(axis=0)
    white = np.linalg.solve(np.linalg.cholesky(z.T @ z / n), z.T).T
    X = white @ np.linalg.cholesky(cov).T
    y = X @ theta + rng.normal(0.0, np.sqrt(REG_NOISE_VAR), size=n)
    y -= y.mean()
    return RegressionData(X, y), theta


@dataclass(frozen=True)
class FATruth:
    loading: np.ndarray
    noise_vars: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return self.loading @ self.loading.T + np.diag(self.noise_vars)


def gen_fa(n: int, seed, *, d: int = 10, k: int = 5, return_truth: bool = False):
    """Zero-mean factor-analysis data: loadings U[-1.5, 1.5], noise variances U(0, 1)."""
    if n < 20:
        raise InvalidArgument("gen_fa needs n >= 20")
    rng = _rng(seed, "fa")
    A = rng.uniform(-1.5, 1.5, size=(d, k))
    psi = rng.uniform(0.0, 1.0, size=d)
    psi = np.where(psi > 0, psi, np.finfo(float).tiny)
    Y = rng.standard_normal((n, k))
    X = Y @ A.T + rng.standard_normal((n, d)) * np.sqrt(psi)
    if return_truth:
        return X, FATruth(A, psi)
    return X


def gen_spiral(n: int = 900, noise_sd: float = 1.0, seed=0) -> np.ndarray:
    """The shrinking spiral ``((13 - t/2) cos t, -(13 - t/2) sin t, t)``, t ~ U[0, 4 pi]."""
    if n < 30:
        raise InvalidArgument("gen_spiral needs n >= 30")
    rng = _rng(seed, "spiral")
    t = rng.uniform(0.0, 4.0 * np.pi, size=n)
    r = 13.0 - 0.5 * t
    clean = np.column_stack([r * np.cos(t), -r * np.sin(t), t])
    return clean + noise_sd * rng.standard_normal((n, 3))


TRIANGLE_COV = np.diag([2.25, 0.25])
TRIANGLE_ANGLES = (0.0, 60.0, 120.0)


def _rotation(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


def triangle_geometry(side: float = 8.0):
    """Cluster centers and rotation matrices of the triangle data.

    The centers are the vertices of an equilateral triangle of the given side;
    each cluster's long axis points along the edge of the enclosing triangle
    (twice the size) whose midpoint it sits on, so the three clusters trace
    the outline of a triangle.
    """
    h = side * np.sqrt(3.0) / 2.0
    centers = np.array([[side, 0.0], [0.5 * side, h], [1.5 * side, h]])
    rots = [_rotation(a) for a in TRIANGLE_ANGLES]
    return centers, rots


def gen_triangle(n: int = 600, seed=0, *, side: float = 8.0, return_labels: bool = False):
    if n % 3:
        raise InvalidArgument("gen_triangle needs n divisible by 3")
    rng = _rng(seed, "triangle")
    centers, rots = triangle_geometry(side)
    per = n // 3
    sd = np.sqrt(np.diag(TRIANGLE_COV))
    blocks = []
    for c, r in zip(centers, rots):
        z = rng.standard_normal((per, 2)) * sd
        blocks.append(z @ r.T + c)
    X = np.vstack(blocks)
    if return_labels:
        return X, np.repeat(np.arange(3), per)
    return X


def gen_two_gaussians(n: int = 400, separation: float = 20.0, seed=0, *, return_labels: bool = False):
    """Two unit-variance 1-D Gaussians at ``-separation/2`` and ``+separation/2``, n/2 points each."""
    if n % 2 or n < 4:
        raise InvalidArgument("gen_two_gaussians needs an even n >= 4")
    rng = _rng(seed, "two_gaussians")
    half = n // 2
    x = np.concatenate([rng.normal(-0.5 * separation, 1.0, half), rng.normal(0.5 * separation, 1.0, half)])
    X = x[:, None]
    if return_labels:
        return X, np.repeat(np.arange(2), half)
    return X


@dataclass(frozen=True)
class MFATruth:
    means: np.ndarray
    loadings: list
    noise_vars: np.ndarray
    labels: np.ndarray

    def covariance(self, i: int) -> np.ndarray:
        a = self.loadings[i]
        return a @ a.T + np.diag(self.noise_vars)


def gen_mfa(n: int, m: int, k, separation: float = 10.0, seed=0, *, d: int = 6, return_truth: bool = False):
    """Mixture of factor analyzers with equal mixing weights and a shared noise.

    Analyzer means sit at the vertices of a regular simplex with edge
    ``separation``; loadings are U[-1.5, 1.5], shared noise variances U(0, 0.5).
    """
    k = [int(v) for v in np.atleast_1d(k)]
    if m < 1 or len(k) != m:
        raise InvalidArgument("need m >= 1 and one factor count per analyzer")
    if any(v < 0 or v >= d for v in k):
        raise InvalidArgument("every factor count must satisfy 0 <= k_i < d")
    if m > d:
        raise InvalidArgument("gen_mfa places means on a simplex and needs m <= d")
    rng = _rng(seed, "mfa")
    means = np.zeros((m, d))
    if m > 1:
        means = np.eye(d)[:m] * (separation / np.sqrt(2.0))
    loadings = [rng.uniform(-1.5, 1.5, size=(d, ki)) for ki in k]
    psi = rng.uniform(0.0, 0.5, size=d)
    psi = np.where(psi > 0, psi, np.finfo(float).tiny)
    labels = rng.integers(0, m, size=n)
    X = np.empty((n, d))
    for i in range(m):
        idx = np.flatnonzero(labels == i)
        y = rng.standard_normal((idx.size, k[i]))
        X[idx] = means[i] + y @ loadings[i].T + rng.standard_normal((idx.size, d)) * np.sqrt(psi)
    if return_truth:
        return X, MFATruth(means, loadings, psi, labels)
    return X


def write_csv(path, data: np.ndarray, header=None) -> Path:
    """Dump a data matrix with a header row and 17 significant digits."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if header is None:
        header = [f"x{j + 1}" for j in range(data.shape[1])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path


def read_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
