"""Model selection for centered linear regression without intercept.

Three selectors are provided and share a single noise scale, the full-model
MLE ``RSS/n``:

* :func:`quick_ic_regression` maximizes the adaptive-Lasso penalized
  likelihood with the fixed parameter ``2 * lambda_ic``;
* :func:`exhaustive_ic_regression` scores every subset in a size window;
* :func:`alasso_plus_ic` scores the breakpoints of :func:`alasso_path`.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import COND_LIMIT, WEIGHT_FLOOR, ICSpec, SelectionResult, ic_score, lambda_ic
from .errors import BudgetExceeded, InvalidArgument, NumericFailure

SIGMA2_FLOOR = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class RegressionData:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise InvalidArgument(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidArgument("regression data contain non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @functools.cached_property
    def gram(self) -> np.ndarray:
        return self.X.T @ self.X

    @functools.cached_property
    def xty(self) -> np.ndarray:
        return self.X.T @ self.y

    @functools.cached_property
    def yty(self) -> float:
        return float(self.y @ self.y)

    def rss(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        r = self.y - self.X @ theta
        return float(r @ r)


@dataclass(frozen=True)
class RegressionFit:
    coefficients: np.ndarray
    noise_variance: float
    loglik: float


def gaussian_loglik(rss: float, n: int, sigma2: float) -> float:
    """Gaussian log-likelihood of residuals with known variance ``sigma2``."""
    return -0.5 * n * (LOG_2PI + math.log(sigma2)) - 0.5 * rss / sigma2


def ols_full_fit(data: RegressionData) -> RegressionFit:
    if data.n <= data.p:
        raise InvalidArgument(f"full-model fit needs n > p (n={data.n}, p={data.p})")
    g = data.gram
    cond = np.linalg.cond(g)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericFailure(f"design is singular or ill-conditioned (cond={cond:.3g})")
    coef = np.linalg.solve(g, data.xty)
    rss = data.rss(coef)
    sigma2 = max(rss / data.n, SIGMA2_FLOOR)
    return RegressionFit(coef, sigma2, gaussian_loglik(rss, data.n, sigma2))


def observed_fisher_linreg(data: RegressionData, sigma2: float) -> np.ndarray:
    if not sigma2 > 0:
        raise InvalidArgument("sigma2 must be positive")
    return data.gram / sigma2


def _weights_from(theta_hat: np.ndarray) -> np.ndarray:
    # Coordinates with a (numerically) zero initial estimate get an infinite
    # weight, which pins them at zero.
    a = np.abs(theta_hat)
    w = np.full(a.shape, np.inf)
    ok = a >= WEIGHT_FLOOR
    w[ok] = 1.0 / a[ok]
    return w


def _npl(data, theta, sigma2, pen_weights):
    rss = data.yty - 2.0 * data.xty @ theta + theta @ data.gram @ theta
    rss = max(float(rss), 0.0)
    nz = theta != 0
    return -gaussian_loglik(rss, data.n, sigma2) + float(np.sum(pen_weights[nz] * np.abs(theta[nz])))


def _coordinate_descent(data, sigma2, pen_weights, theta0, tol, max_sweeps):
    """Minimize RSS/(2 sigma2) + sum(pen_weights * |theta|) by cyclic updates."""
    g = data.gram
    b = data.xty
    theta = theta0.copy()
    thresh = pen_weights * sigma2
    diag = np.diag(g)
    trace = [(0, _npl(data, theta, sigma2, pen_weights))]
    gt = g @ theta
    converged = False
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(theta.size):
            old = theta[j]
            z = b[j] - gt[j] + diag[j] * old
            if np.isinf(thresh[j]) or abs(z) <= thresh[j]:
                new = 0.0
            else:
                new = math.copysign(abs(z) - thresh[j], z) / diag[j]
            if new != old:
                gt += g[:, j] * (new - old)
                theta[j] = new
                max_delta = max(max_delta, abs(new - old))
        trace.append((sweep, _npl(data, theta, sigma2, pen_weights)))
        if max_delta < tol:
            converged = True
            break
    return theta, trace, converged


def quick_ic_regression(
    data: RegressionData,
    spec: ICSpec = ICSpec.bic(),
    *,
    tol: float = 1e-8,
    max_sweeps: int = 10000,
    fit: RegressionFit | None = None,
    refresh: bool = False,
    max_refresh: int = 50,
) -> SelectionResult:
    """Maximize ``l(theta) - 2 lambda_ic sum |theta_i| / |theta_hat_i|``.

    The likelihood uses the full-model noise variance, the ALasso weights the
    full-model OLS estimate. Cyclic coordinate descent starts from the OLS
    estimate; the reported objective is the negative penalized likelihood.

    Parameters
    ----------
    refresh : bool
        When True, after each solve the weights are rebuilt from the OLS fit
        restricted to the surviving predictors and the problem is solved
        again, until the support stops changing. Each refresh is logged as an
        event; the noise variance stays at its full-model value.
    max_refresh : int
        Cap on the number of refresh rounds.
    """
    fit = fit or ols_full_fit(data)
    lam = lambda_ic(spec, data.n)
    sigma2 = fit.noise_variance
    anchor = fit.coefficients
    trace, events = [], []
    converged = True
    for rnd in range(max_refresh + 1):
        pen_weights = 2.0 * lam * _weights_from(anchor)
        theta0 = np.where(np.isinf(pen_weights), 0.0, anchor)
        theta, sub, conv = _coordinate_descent(data, sigma2, pen_weights, theta0, tol, max_sweeps)
        converged = converged and conv
        offset = len(trace)
        trace.extend((offset + it, v) for it, v in sub)
        support = np.flatnonzero(theta)
        active = np.flatnonzero(np.isfinite(pen_weights))
        if not refresh or np.array_equal(support, active) or support.size == 0:
            break
        if rnd == max_refresh:
            converged = False
            break
        anchor = np.zeros(data.p)
        gs = data.gram[np.ix_(support, support)]
        anchor[support] = np.linalg.solve(gs, data.xty[support])
        events.append((len(trace) - 1, f"refresh weights on {support.size} predictors"))
    return SelectionResult(
        support=support,
        estimate=theta,
        objective=trace[-1][1],
        trace=trace,
        converged=converged,
        events=events,
        info={"lambda_ic": lam, "sigma2": sigma2, "refreshes": len(events)},
    )


@functools.lru_cache(maxsize=64)
def _combinations(p: int, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros((1, 0), dtype=np.intp)
    arr = np.fromiter(
        itertools.chain.from_iterable(itertools.combinations(range(p), k)),
        dtype=np.intp,
        count=math.comb(p, k) * k,
    )
    arr = arr.reshape(-1, k)
    arr.setflags(write=False)
    return arr


def _subset_rss(data: RegressionData, combos: np.ndarray, chunk: int = 40000) -> np.ndarray:
    """RSS of the OLS fit on every row of ``combos`` via batched normal equations."""
    k = combos.shape[1]
    if k == 0:
        return np.array([data.yty])
    g, b = data.gram, data.xty
    out = np.empty(combos.shape[0])
    for start in range(0, combos.shape[0], chunk):
        c = combos[start : start + chunk]
        gs = g[c[:, :, None], c[:, None, :]]
        bs = b[c]
        sol = np.linalg.solve(gs, bs[..., None])[..., 0]
        out[start : start + chunk] = data.yty - np.einsum("ij,ij->i", bs, sol)
    return np.maximum(out, 0.0)


def exhaustive_ic_regression(
    data: RegressionData,
    spec: ICSpec = ICSpec.bic(),
    size_min: int = 0,
    size_max: int | None = None,
    *,
    budget: int = 10_000_000,
    fit: RegressionFit | None = None,
) -> SelectionResult:
    """Best-subset search scored by ``-l + lambda_ic * |S|``.

    Each subset gets its own OLS coefficients; the noise variance is the
    full-model one. Ties go to the smaller subset, then to the
    lexicographically first support.
    """
    p = data.p
    size_max = p if size_max is None else size_max
    if not 0 <= size_min <= size_max <= p:
        raise InvalidArgument(f"need 0 <= size_min <= size_max <= p, got [{size_min}, {size_max}], p={p}")
    count = sum(math.comb(p, k) for k in range(size_min, size_max + 1))
    if count > budget:
        raise BudgetExceeded(f"{count} subsets exceed the budget of {budget}")
    fit = fit or ols_full_fit(data)
    sigma2 = fit.noise_variance
    lam = lambda_ic(spec, data.n)
    const = 0.5 * data.n * (LOG_2PI + math.log(sigma2))
    best_score, best_support, trace = math.inf, (), []
    for k in range(size_min, size_max + 1):
        combos = _combinations(p, k)
        scores = const + 0.5 * _subset_rss(data, combos) / sigma2 + lam * k
        j = int(np.argmin(scores))
        trace.append((k, float(scores[j])))
        if scores[j] < best_score:
            best_score, best_support = float(scores[j]), tuple(combos[j])
    est = np.zeros(p)
    if best_support:
        s = list(best_support)
        est[s] = np.linalg.solve(data.gram[np.ix_(s, s)], data.xty[s])
    return SelectionResult(
        support=best_support,
        estimate=est,
        objective=best_score,
        trace=trace,
        info={"lambda_ic": lam, "sigma2": sigma2, "n_subsets": count},
    )


@dataclass
class ALassoPath:
    """Breakpoints of the adaptive-Lasso path, ordered by decreasing lambda.

    ``lambdas`` are on the penalized log-likelihood scale: the solution at
    ``lam`` maximizes ``l(theta) - lam * sum |theta_i| / |theta_hat_i|``.
    """

    lambdas: np.ndarray
    coefs: np.ndarray
    theta_hat: np.ndarray
    sigma2: float
    grid_fallback: bool = False
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.lambdas)

    def __iter__(self):
        return iter(zip(self.lambdas, self.coefs))


def _lars_lasso(gram, corr, max_steps):
    """Lasso homotopy on a Gram matrix; returns (lams, betas, events) or None if degenerate.

    Solves min 1/2 ||y - X b||^2 + lam ||b||_1 for all lam >= 0, where
    ``gram = X^T X`` and ``corr = X^T y``.
    """
    p = corr.size
    beta = np.zeros(p)
    c = corr.copy()
    lam = float(np.max(np.abs(c)))
    lams, betas, events = [lam], [beta.copy()], []
    if lam == 0:
        return lams, betas, events
    active = [int(np.argmax(np.abs(c)))]
    events.append(("add", active[0]))
    tiny = 1e-12 * max(1.0, lam)
    for _ in range(max_steps):
        a = np.array(active)
        s = np.sign(c[a])
        # active coordinates that are already nonzero keep their sign
        nz = beta[a] != 0
        s[nz] = np.sign(beta[a][nz])
        try:
            gaa = gram[np.ix_(a, a)]
            if np.linalg.cond(gaa) > COND_LIMIT:
                return None
            d = np.linalg.solve(gaa, s)
        except np.linalg.LinAlgError:
            return None
        av = gram[:, a] @ d
        gamma, kind, who = lam, "end", -1
        inactive = np.setdiff1d(np.arange(p), a)
        for j in inactive:
            for num, den in ((lam - c[j], 1.0 - av[j]), (lam + c[j], 1.0 + av[j])):
                if den > 1e-14:
                    g = num / den
                    if tiny < g < gamma:
                        gamma, kind, who = g, "add", int(j)
        for idx, j in enumerate(a):
            if d[idx] != 0 and beta[j] != 0:
                g = -beta[j] / d[idx]
                if tiny < g < gamma:
                    gamma, kind, who = g, "drop", int(j)
        beta[a] += gamma * d
        lam -= gamma
        if kind == "end":
            lam = 0.0
        elif kind == "drop":
            beta[who] = 0.0
            active.remove(who)
        else:
            active.append(who)
        c = corr - gram @ beta
        lams.append(lam)
        betas.append(beta.copy())
        events.append((kind, who))
        if kind == "end":
            return lams, betas, events
    return None


def _grid_path(data, fit, num=100):
    a = np.abs(fit.coefficients)
    corr = np.abs(data.xty * a) / fit.noise_variance
    lam_max = float(np.max(corr))
    lams = np.concatenate([np.geomspace(lam_max, lam_max * 1e-4, num - 1), [0.0]])
    w = _weights_from(fit.coefficients)
    theta = np.zeros(data.p)
    coefs = []
    for lam in lams:
        theta, _, _ = _coordinate_descent(data, fit.noise_variance, lam * w, theta, 1e-10, 10000)
        coefs.append(theta.copy())
    coefs[-1] = fit.coefficients.copy()
    return lams, np.array(coefs)


def alasso_path(data: RegressionData, *, fit: RegressionFit | None = None) -> ALassoPath:
    """Entire adaptive-Lasso solution path (gamma = 1) by a LARS-type homotopy.

    The design is reweighted column-wise by ``|theta_hat|``, the ordinary
    Lasso homotopy is run on it, and the solutions are mapped back. If the
    homotopy meets a degenerate step, a 100-point log-spaced grid solved by
    coordinate descent is returned instead, with ``grid_fallback=True``.
    """
    fit = fit or ols_full_fit(data)
    a = np.abs(fit.coefficients)
    if np.any(a < WEIGHT_FLOOR):
        raise InvalidArgument("full-model estimate has (numerically) zero entries")
    gram = data.gram * np.outer(a, a)
    corr = data.xty * a
    res = _lars_lasso(gram, corr, max_steps=20 * data.p + 100)
    sigma2 = fit.noise_variance
    if res is None:
        lams, coefs = _grid_path(data, fit)
        return ALassoPath(lams, coefs, fit.coefficients.copy(), sigma2, grid_fallback=True)
    lams, betas, events = res
    coefs = np.array(betas) * a
    coefs[-1] = fit.coefficients
    return ALassoPath(np.array(lams) / sigma2, coefs, fit.coefficients.copy(), sigma2, events=events)


def alasso_kkt_residual(data: RegressionData, path: ALassoPath, lam: float, theta) -> float:
    """Largest violation of the optimality conditions of the ALasso objective at ``theta``.

    Scaled by the penalty level so the value is comparable across breakpoints.
    """
    theta = np.asarray(theta, dtype=float)
    w = _weights_from(path.theta_hat)
    grad = (data.xty - data.gram @ theta) / path.sigma2
    nz = theta != 0
    res = np.zeros(theta.size)
    res[nz] = np.abs(grad[nz] - lam * w[nz] * np.sign(theta[nz]))
    res[~nz] = np.maximum(np.abs(grad[~nz]) - lam * w[~nz], 0.0)
    scale = max(1.0, lam * float(np.max(w)))
    return float(np.max(res) / scale)


def alasso_plus_ic(
    path: ALassoPath, data: RegressionData, spec: ICSpec = ICSpec.bic()
) -> SelectionResult:
    """Pick the path breakpoint minimizing ``-l(theta_path) + lambda_ic * nnz``.

    The likelihood is evaluated at the path coefficients themselves (no
    refit) with the full-model noise variance.
    """
    if len(path) == 0:
        raise InvalidArgument("empty path")
    lam = lambda_ic(spec, data.n)
    best, best_i, trace = math.inf, 0, []
    for i, theta in enumerate(path.coefs):
        ll = gaussian_loglik(data.rss(theta), data.n, path.sigma2)
        score = ic_score(ll, int(np.count_nonzero(theta)), lam)
        trace.append((i, score))
        if score < best:
            best, best_i = score, i
    theta = path.coefs[best_i]
    return SelectionResult(
        support=np.flatnonzero(theta),
        estimate=theta.copy(),
        objective=best,
        trace=trace,
        info={"lambda_ic": lam, "path_lambda": float(path.lambdas[best_i]), "breakpoint": best_i},
    )
