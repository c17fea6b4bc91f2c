import numpy as np
import pytest
from scipy.linalg import null_space

from quickic.linreg import RegressionData


def random_spd(rng, dim, cond=50.0):
    """SPD matrix with eigenvalues log-uniform on [1, cond]."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    vals = np.exp(rng.uniform(0.0, np.log(cond), size=dim))
    h = (q * vals) @ q.T
    return 0.5 * (h + h.T)


def zero_offdiag_rowsum_matrix(rng, dim):
    """SPD matrix whose off-diagonal entries sum to zero in every row."""
    iu = np.triu_indices(dim, 1)
    npair = iu[0].size
    # constraint j: sum over pairs touching vertex j of the pair entry = 0
    cons = np.zeros((dim, npair))
    for e, (a, b) in enumerate(zip(*iu)):
        cons[a, e] = cons[b, e] = 1.0
    basis = null_space(cons) if npair else np.zeros((0, 0))
    off = np.zeros((dim, dim))
    if basis.size:
        off[iu] = basis @ rng.standard_normal(basis.shape[1])
        off = off + off.T
    lam_min = np.linalg.eigvalsh(off)[0] if dim > 1 else 0.0
    return off + np.diag(max(0.0, -lam_min) + rng.uniform(0.2, 3.0, size=dim))


def orthogonal_design(rng, n, p, noise_sd=1.0):
    """Regression data with X^T X diagonal (columns with random scales)."""
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    X = q * rng.uniform(0.5, 3.0, size=p) * np.sqrt(n)
    theta = rng.normal(0.0, 0.3, size=p) * (rng.random(p) < 0.6)
    y = X @ theta + noise_sd * rng.standard_normal(n)
    return RegressionData(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
