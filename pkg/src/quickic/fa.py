"""Factor analysis: ML fitting by EM and Quick-BIC selection of the factor count.

The data are taken to be zero-mean (center them first); all fits work from
the second-moment matrix ``S = X^T X / n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .core import ICSpec, SelectionResult, lambda_ic
from .errors import HeywoodCase, InvalidArgument, NumericFailure

PSI_FLOOR = 1e-8
LQA_EPS = 1e-8
DROP_REL = 1e-4
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class FAModel:
    loading: np.ndarray
    noise_vars: np.ndarray
    trace: list = field(default_factory=list, repr=False, compare=False)
    converged: bool = field(default=True, compare=False)
    events: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.noise_vars = np.asarray(self.noise_vars, dtype=float).ravel()
        d = self.noise_vars.size
        self.loading = np.asarray(self.loading, dtype=float).reshape(d, -1)
        if np.any(self.noise_vars <= 0):
            raise InvalidArgument("noise variances must be positive")

    @property
    def d(self) -> int:
        return self.noise_vars.size

    @property
    def k(self) -> int:
        return self.loading.shape[1]

    @property
    def covariance(self) -> np.ndarray:
        return self.loading @ self.loading.T + np.diag(self.noise_vars)

    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.loading, axis=0)


def second_moment(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X.T @ X / X.shape[0]


def gaussian_loglik_from_moment(S: np.ndarray, n: int, cov: np.ndarray) -> float:
    """Zero-mean Gaussian log-likelihood of ``n`` points with second moment ``S``."""
    try:
        c = linalg.cho_factor(cov, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericFailure("model covariance is not positive definite") from exc
    logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
    tr = np.trace(linalg.cho_solve(c, S, check_finite=False))
    return -0.5 * n * (S.shape[0] * LOG_2PI + logdet + tr)


def fa_loglik(X, model: FAModel) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return gaussian_loglik_from_moment(second_moment(X), X.shape[0], model.covariance)


def fa_n_params(d: int, k: int) -> int:
    """Free parameters of a k-factor model: loadings up to rotation, plus noise."""
    return d * k - k * (k - 1) // 2 + d


def _posterior_stats(S, A, psi):
    """E-step sufficient statistics: (beta, E[yy^T] averaged, S beta^T)."""
    k = A.shape[1]
    apsi = A.T / psi
    m = np.eye(k) + apsi @ A
    beta = np.linalg.solve(m, apsi)
    sb = S @ beta.T
    eyy = np.eye(k) - beta @ A + beta @ sb
    return beta, 0.5 * (eyy + eyy.T), sb


def _psi_update(S, A, sb, eyy):
    return np.diag(S) - 2.0 * np.einsum("ij,ij->i", A, sb) + np.einsum("ij,jk,ik->i", A, eyy, A)


def _check_psi(psi, heywood, events, it):
    low = np.flatnonzero(psi < PSI_FLOOR)
    if low.size:
        if heywood == "raise":
            raise HeywoodCase(low[0], psi[low[0]])
        events.append((it, f"heywood clamp {low.tolist()}"))
        psi = np.maximum(psi, PSI_FLOOR)
    return psi


def canonical_rotation(A: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Rotate loadings so ``A^T Psi^-1 A`` is diagonal with decreasing entries.

    Concentrates each direction's contribution in one column, the natural
    basis for column-wise shrinkage. Signs are fixed so every column's
    largest-magnitude entry is positive. The likelihood is unchanged.
    """
    if A.shape[1] == 0:
        return A.copy()
    g = (A.T / psi) @ A
    _, vecs = np.linalg.eigh(0.5 * (g + g.T))
    R = A @ vecs[:, ::-1]
    flip = np.sign(R[np.argmax(np.abs(R), axis=0), np.arange(R.shape[1])])
    flip[flip == 0] = 1.0
    return R * flip


def init_fa(S: np.ndarray, k: int, rng: np.random.Generator) -> FAModel:
    sd = np.sqrt(np.diag(S))
    A = rng.uniform(-0.5, 0.5, size=(S.shape[0], k)) * sd[:, None]
    return FAModel(A, np.diag(S).copy())


def fa_em_fit(
    X,
    k: int,
    tol: float = 1e-7,
    max_iter: int = 2000,
    *,
    seed=0,
    init: FAModel | None = None,
    heywood: str = "raise",
    rotate: bool = True,
) -> FAModel:
    """Maximum-likelihood factor analysis by EM.

    Stops when the relative change of the log-likelihood drops below ``tol``.
    ``heywood="raise"`` turns a noise variance under ``PSI_FLOOR`` into a
    :class:`HeywoodCase`; ``"clamp"`` floors it and records an event.
    The returned model carries the log-likelihood trace.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if not 0 <= k <= d:
        raise InvalidArgument(f"need 0 <= k <= d, got k={k}, d={d}")
    if n <= d:
        raise InvalidArgument(f"need n > d, got n={n}, d={d}")
    S = second_moment(X)
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    model = init if init is not None else init_fa(S, k, rng)
    A, psi = model.loading.copy(), model.noise_vars.copy()
    events = []
    ll = gaussian_loglik_from_moment(S, n, A @ A.T + np.diag(psi))
    trace = [(0, ll)]
    converged = False
    for it in range(1, max_iter + 1):
        if k:
            _, eyy, sb = _posterior_stats(S, A, psi)
            A = np.linalg.solve(eyy, sb.T).T
            psi = _psi_update(S, A, sb, eyy)
        else:
            psi = np.diag(S).copy()
        psi = _check_psi(psi, heywood, events, it)
        new = gaussian_loglik_from_moment(S, n, A @ A.T + np.diag(psi))
        trace.append((it, new))
        if abs(new - ll) <= tol * abs(new):
            ll = new
            converged = True
            break
        ll = new
    if rotate:
        A = canonical_rotation(A, psi)
    return FAModel(A, psi, trace=trace, converged=converged, events=events)


def fa_npl(X, model: FAModel, anchors, lam: float, d_free: int | None = None) -> float:
    """Negative penalized likelihood ``-l + 2 D_f lam sum ||A_i|| / anchor_i``."""
    d_free = model.d - model.k + 1 if d_free is None else d_free
    pen = np.sum(model.column_norms() / np.asarray(anchors, dtype=float))
    return -fa_loglik(X, model) + 2.0 * d_free * lam * float(pen)


def fa_npl_grad(X, model: FAModel, anchors, lam: float, d_free: int | None = None):
    """Gradient of :func:`fa_npl` w.r.t. (loading, noise_vars); needs nonzero columns."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    S = second_moment(X)
    d_free = model.d - model.k + 1 if d_free is None else d_free
    A = model.loading
    cinv = np.linalg.inv(model.covariance)
    g = n * (cinv - cinv @ S @ cinv)
    ga = g @ A
    gpsi = 0.5 * np.diag(g)
    norms = model.column_norms()
    ga = ga + 2.0 * d_free * lam * A / (norms * np.asarray(anchors, dtype=float))
    return ga, gpsi


@dataclass
class FAPenaltyState:
    init_column_norms: np.ndarray
    d: int

    def __post_init__(self):
        self.init_column_norms = np.asarray(self.init_column_norms, dtype=float)
        from .core import WEIGHT_FLOOR

        if np.any(self.init_column_norms <= WEIGHT_FLOOR):
            raise InvalidArgument("initial column norms must exceed the weight floor")

    @property
    def k(self) -> int:
        return self.init_column_norms.size

    @property
    def d_free(self) -> int:
        return self.d - self.k + 1


def _penalized_a_step(sb, eyy, psi, n, quad):
    """Row-wise closed-form A update under a diagonal quadratic column penalty."""
    d, k = sb.shape
    A = np.empty((d, k))
    qd = np.diag(quad)
    for r in range(d):
        A[r] = np.linalg.solve(eyy + (2.0 * psi[r] / n) * qd, sb[r])
    return A


def quick_bic_fa(
    X,
    k_init: int = 8,
    spec: ICSpec = ICSpec.bic(),
    *,
    tol: float = 1e-7,
    max_iter: int = 3000,
    seed=0,
    refresh: bool = False,
    drop_rel: float = DROP_REL,
    init_fit: FAModel | None = None,
    heywood: str = "clamp",
):
    """Select the factor count by minimizing the grouped ALasso penalized likelihood.

    The ML fit with ``k_init`` factors (canonically rotated) supplies the
    column-norm anchors. Each EM iteration replaces the column norms by their
    local quadratic approximation, which gives a closed-form loading update.
    A column whose norm falls below ``drop_rel`` times its anchor is removed,
    ``k`` is decremented and ``D_f = d - k + 1`` recomputed. With
    ``refresh=True`` the model is refitted by ML at the new ``k`` and the
    anchors are reset after every removal.

    Returns ``(FAModel, SelectionResult)``; the result's support lists the
    surviving columns of the initial fit and its trace holds ``npl``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if not 1 <= k_init <= d:
        raise InvalidArgument(f"need 1 <= k_init <= d, got {k_init}")
    S = second_moment(X)
    lam = lambda_ic(spec, n)
    if init_fit is None:
        init_fit = fa_em_fit(X, k_init, seed=seed, heywood=heywood)
    A = canonical_rotation(init_fit.loading, init_fit.noise_vars)
    psi = init_fit.noise_vars.copy()
    state = FAPenaltyState(np.linalg.norm(A, axis=0), d)
    cols = list(range(k_init))

    def npl(A_, psi_):
        ll = gaussian_loglik_from_moment(S, n, A_ @ A_.T + np.diag(psi_))
        return -ll + 2.0 * state.d_free * lam * float(np.sum(np.linalg.norm(A_, axis=0) / state.init_column_norms))

    cur = npl(A, psi)
    trace, events = [(0, cur)], []
    converged = False
    just_changed = False
    for it in range(1, max_iter + 1):
        if not cols:
            break
        coef = 2.0 * state.d_free * lam / state.init_column_norms
        norms = np.linalg.norm(A, axis=0)
        quad = coef / (2.0 * (norms + LQA_EPS))
        _, eyy, sb = _posterior_stats(S, A, psi)
        A = _penalized_a_step(sb, eyy, psi, n, quad)
        psi = _psi_update(S, A, sb, eyy)
        psi = _check_psi(psi, heywood, events, it)
        new = npl(A, psi)
        trace.append((it, new))

        norms = np.linalg.norm(A, axis=0)
        gone = np.flatnonzero(norms < drop_rel * state.init_column_norms)
        if gone.size:
            keep = np.setdiff1d(np.arange(len(cols)), gone)
            events.append((it, f"drop columns {[cols[g] for g in gone]}"))
            cols = [cols[j] for j in keep]
            A = A[:, keep]
            state = FAPenaltyState(state.init_column_norms[keep], d)
            if refresh and cols:
                refit = fa_em_fit(X, len(cols), init=FAModel(A, psi), heywood=heywood)
                A = canonical_rotation(refit.loading, refit.noise_vars)
                psi = refit.noise_vars.copy()
                state = FAPenaltyState(np.linalg.norm(A, axis=0), d)
                events.append((it, "refresh anchors"))
            cur = npl(A, psi) if cols else -gaussian_loglik_from_moment(S, n, np.diag(psi))
            just_changed = True
            continue
        if not just_changed and abs(new - cur) <= tol * abs(new):
            cur = new
            converged = True
            break
        just_changed = False
        cur = new
    model = FAModel(A, psi, trace=trace, converged=converged, events=events)
    est = np.zeros(k_init)
    est[cols] = model.column_norms()
    result = SelectionResult(
        support=cols,
        estimate=est,
        objective=cur,
        trace=trace,
        converged=converged,
        events=events,
        info={"k": len(cols), "d_free": d - len(cols) + 1, "lambda_ic": lam, "degenerate": not cols},
    )
    return model, result


def fa_ic_select(X, k_min: int, k_max: int, spec: ICSpec = ICSpec.bic(), *, seed=0, heywood: str = "raise", **fit_kw):
    """Fit every k in ``[k_min, k_max]`` and return ``(k, model, scores)`` minimizing the IC."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if not 0 <= k_min <= k_max <= d:
        raise InvalidArgument("need 0 <= k_min <= k_max <= d")
    lam = lambda_ic(spec, n)
    best_k, best_model, best_score, scores = None, None, math.inf, {}
    for k in range(k_min, k_max + 1):
        model = fa_em_fit(X, k, seed=seed, heywood=heywood, **fit_kw)
        score = -model.trace[-1][1] + lam * fa_n_params(d, k)
        scores[k] = score
        if score < best_score:
            best_k, best_model, best_score = k, model, score
    return best_k, best_model, scores


def fold_assignment(n: int, folds: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    labels = np.arange(n) % folds
    return rng.permutation(labels)


def fa_cv_select(X, k_min: int, k_max: int, folds: int = 5, *, seed=0, heywood: str = "raise", **fit_kw):
    """Pick k by mean held-out log-likelihood over ``folds`` folds.

    Returns ``(k, scores)`` where scores maps each k to its mean held-out
    log-likelihood per fold.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if folds < 2 or folds > n:
        raise InvalidArgument("need 2 <= folds <= n")
    lab = fold_assignment(n, folds, seed)
    scores = {}
    for k in range(k_min, k_max + 1):
        total = 0.0
        for f in range(folds):
            train, test = X[lab != f], X[lab == f]
            model = fa_em_fit(train, k, seed=seed, heywood=heywood, **fit_kw)
            total += fa_loglik(test, model)
        scores[k] = total / folds
    best = max(scores, key=lambda kk: (scores[kk], -kk))
    return best, scores
