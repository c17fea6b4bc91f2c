"""Gaussian mixtures: EM, the MML message length and Quick-MML component selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.special import logsumexp

from .errors import InvalidArgument, NumericFailure, StepDegenerate

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_EPS = 1e-3
COV_FLOOR_REL = 1e-8


def gmm_n_params(d: int) -> int:
    """Free parameters of one full-covariance component (mean plus covariance)."""
    return d + d * (d + 1) // 2


@dataclass
class GMMModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    trace: list = field(default_factory=list, repr=False, compare=False)
    converged: bool = field(default=True, compare=False)
    events: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        m, d = self.means.shape
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(m, d, d)
        if self.weights.size != m:
            raise InvalidArgument("weights and means disagree on the component count")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise InvalidArgument("mixing weights must lie on the simplex")

    @property
    def m(self) -> int:
        return self.weights.size

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def m_nonzero(self) -> int:
        return int(np.count_nonzero(self.weights > 0))


def log_gaussian(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Row-wise log N(x; mean, cov)."""
    try:
        c = linalg.cholesky(cov, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NumericFailure("component covariance is not positive definite") from exc
    z = linalg.solve_triangular(c, (X - mean).T, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(c)))
    return -0.5 * (X.shape[1] * LOG_2PI + logdet + np.einsum("ij,ij->j", z, z))


def component_log_densities(X, means, covs) -> np.ndarray:
    return np.column_stack([log_gaussian(X, mu, s) for mu, s in zip(means, covs)])


def _weighted_log(logdens, weights):
    with np.errstate(divide="ignore"):
        return logdens + np.log(weights)


def e_step(X, model: GMMModel):
    """Responsibilities (n x m) and the log-likelihood."""
    lw = _weighted_log(component_log_densities(X, model.means, model.covariances), model.weights)
    lse = logsumexp(lw, axis=1)
    resp = np.exp(lw - lse[:, None])
    return resp, float(np.sum(lse))


def gmm_loglik(X, model: GMMModel) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lw = _weighted_log(component_log_densities(X, model.means, model.covariances), model.weights)
    return float(np.sum(logsumexp(lw, axis=1)))


def gmm_mml_length(model: GMMModel, n: int, loglik: float) -> float:
    """Message length of a full-covariance mixture (sums run over nonzero weights)."""
    pos = model.weights[model.weights > 0]
    if pos.size == 0:
        raise InvalidArgument("at least one component must have positive weight")
    df = gmm_n_params(model.d)
    mnz = pos.size
    return (
        0.5 * df * float(np.sum(np.log(n * pos / 12.0)))
        + 0.5 * mnz * math.log(n / 12.0)
        + 0.5 * mnz * (df + 1)
        - loglik
    )


@dataclass
class LogPenaltyWeights:
    """Adaptive weights for the log penalty ``w_i log((pi_i + eps) / eps)``."""

    anchor: np.ndarray
    epsilon: float = DEFAULT_EPS
    w: np.ndarray = field(init=False)

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float).ravel()
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be positive")
        if np.any(self.anchor <= 0):
            raise InvalidArgument("anchor weights must be positive")
        self.w = 1.0 / np.log((self.epsilon + self.anchor) / self.epsilon)

    def penalty_terms(self, weights) -> np.ndarray:
        weights = np.asarray(weights, dtype=float)
        return self.w * np.log((weights + self.epsilon) / self.epsilon)

    def subset(self, keep) -> "LogPenaltyWeights":
        out = LogPenaltyWeights.__new__(LogPenaltyWeights)
        out.anchor = self.anchor[keep]
        out.epsilon = self.epsilon
        out.w = self.w[keep]
        return out


def gmm_npl(X, model: GMMModel, weights: LogPenaltyWeights, n: int | None = None) -> float:
    """Continuous approximation of the message length (log penalty on mixing weights)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0] if n is None else n
    return _npl_value(model, weights, n, gmm_loglik(X, model))


def _npl_value(model, weights, n, loglik):
    df = gmm_n_params(model.d)
    pos = model.weights[model.weights > 0]
    c = math.log(n / 12.0) + df + 1.0
    return (
        0.5 * df * float(np.sum(np.log(n * pos / 12.0)))
        + c * float(np.sum(weights.penalty_terms(model.weights)))
        - loglik
    )


def gmm_npl_grad(X, model: GMMModel, weights: LogPenaltyWeights, n: int | None = None):
    """Gradient of :func:`gmm_npl` w.r.t. (weights, means, covariances); all weights > 0.

    The weights are treated as free coordinates (no simplex constraint). The
    covariance gradient ``G_i`` satisfies ``d npl = sum_i tr(G_i dSigma_i)`` for
    symmetric perturbations.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0] if n is None else n
    df = gmm_n_params(model.d)
    c = math.log(n / 12.0) + df + 1.0
    resp, _ = e_step(X, model)
    pi = model.weights
    gpi = -resp.sum(axis=0) / pi + 0.5 * df / pi + c * weights.w / (pi + weights.epsilon)
    gmu = np.empty_like(model.means)
    gcov = np.empty_like(model.covariances)
    for i in range(model.m):
        sinv = np.linalg.inv(model.covariances[i])
        r = X - model.means[i]
        h = resp[:, i]
        gmu[i] = -sinv @ (r.T @ h)
        scat = (r * h[:, None]).T @ r
        gcov[i] = -0.5 * (sinv @ scat @ sinv - h.sum() * sinv)
    return gpi, gmu, gcov


def pi_update(resp_sums, weights: LogPenaltyWeights, n: int, m: int, d: int, *, renormalize: bool = True) -> np.ndarray:
    """Closed-form mixing-weight update under the log penalty.

    ``pi_i = max(0, (h_i - D/2 - w_i c/2) / (n - m D/2 - c/2 sum_j w_j))`` with
    ``D`` the per-component parameter count and ``c = log(n/12) + D + 1``;
    surviving entries are then renormalized onto the simplex.
    """
    h = np.asarray(resp_sums, dtype=float).ravel()
    if h.size != m or weights.w.size != m:
        raise InvalidArgument("resp_sums, weights and m disagree")
    if abs(h.sum() - n) > 1e-6 * max(1.0, n):
        raise InvalidArgument("responsibility sums must add up to n")
    df = gmm_n_params(d)
    c = math.log(n / 12.0) + df + 1.0
    den = n - 0.5 * m * df - 0.5 * c * float(np.sum(weights.w))
    if den <= 0:
        raise StepDegenerate(f"mixing-weight update denominator is {den:.4g} <= 0")
    pi = np.maximum(0.0, (h - 0.5 * df - 0.5 * weights.w * c) / den)
    if renormalize:
        tot = pi.sum()
        if tot <= 0:
            raise StepDegenerate("every component was clamped to zero")
        pi = pi / tot
    return pi


def pi_update_mm(resp_sums, weights: LogPenaltyWeights, current, n: int, dfs) -> np.ndarray:
    """Mixing weights that minimize the tangent majorizer of the penalized objective.

    Minimizes ``sum_i [-(h_i - D_i/2) log pi_i + c_i w_i (pi_i - pi0_i) / (pi0_i + eps)]``
    over the simplex, where ``c_i = log(n/12) + D_i + 1``. The log penalty is
    concave, so its tangent at the current weights ``pi0`` bounds it from
    above and each step cannot increase the exact objective. Components with
    ``h_i <= D_i/2`` get weight zero.
    """
    h = np.asarray(resp_sums, dtype=float).ravel()
    dfs = np.broadcast_to(np.asarray(dfs, dtype=float), h.shape)
    c = math.log(n / 12.0) + dfs + 1.0
    kappa = h - 0.5 * dfs
    b = c * weights.w / (np.asarray(current, dtype=float) + weights.epsilon)
    live = kappa > 0
    pi = np.zeros_like(h)
    if not live.any():
        raise StepDegenerate("every component was clamped to zero")
    kl, bl = kappa[live], b[live]

    def excess(mu):
        return float(np.sum(kl / (mu + bl))) - 1.0

    lo = -np.min(bl)
    # sum(kl)/(mu+min bl) >= excess+1 near lo; a root lies in (lo, lo + sum(kl)]
    hi = lo + float(np.sum(kl)) + 1.0
    lo_eval = lo + 1e-12 * max(1.0, abs(lo))
    while excess(lo_eval) <= 0:
        lo_eval = lo + 0.5 * (lo_eval - lo)
        if lo_eval - lo < 1e-300:
            break
    mu = optimize.brentq(excess, lo_eval, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    pi[live] = kl / (mu + bl)
    return pi / pi.sum()


def _floor_covariance(cov, floor):
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if vals[0] >= floor:
        return cov, False
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T, True


def init_gmm(X, m: int, rng: np.random.Generator) -> GMMModel:
    """Means drawn from the data without replacement, shrunken sample covariance, uniform weights."""
    n, d = X.shape
    if m > n:
        raise InvalidArgument("more components than data points")
    means = X[rng.choice(n, size=m, replace=False)].copy()
    cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True)) / m ** (2.0 / d)
    return GMMModel(np.full(m, 1.0 / m), means, np.repeat(cov[None], m, axis=0))


def _m_step_moments(X, resp):
    nk = resp.sum(axis=0)
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((resp.shape[1], X.shape[1], X.shape[1]))
    for i in range(resp.shape[1]):
        r = X - means[i]
        covs[i] = (r * resp[:, i, None]).T @ r / nk[i]
        covs[i] = 0.5 * (covs[i] + covs[i].T)
    return nk, means, covs


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gmm_em_fit(X, m: int, *, tol: float = 1e-8, max_iter: int = 3000, seed=0, init: GMMModel | None = None) -> GMMModel:
    """Plain maximum-likelihood EM. The returned model carries the log-likelihood trace."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    model = init if init is not None else init_gmm(X, m, _as_rng(seed))
    floor = COV_FLOOR_REL * np.trace(np.atleast_2d(np.cov(X, rowvar=False, bias=True))) / d
    resp, ll = e_step(X, model)
    trace, events, converged = [(0, ll)], [], False
    for it in range(1, max_iter + 1):
        nk, means, covs = _m_step_moments(X, resp)
        for i in range(covs.shape[0]):
            covs[i], hit = _floor_covariance(covs[i], floor)
            if hit:
                events.append((it, f"covariance floor on component {i}"))
        model = GMMModel(nk / nk.sum(), means, covs)
        resp, new = e_step(X, model)
        trace.append((it, new))
        if abs(new - ll) <= tol * abs(new):
            converged, ll = True, new
            break
        ll = new
    model.trace, model.converged, model.events = trace, converged, events
    return model


def quick_mml_gmm(
    X,
    m_max: int,
    epsilon: float = DEFAULT_EPS,
    seed=0,
    *,
    tol: float = 1e-7,
    max_iter: int = 3000,
    refresh_every: int = 50,
    refresh_on_drop: bool = True,
    pi_step: str = "mm",
    init: GMMModel | None = None,
):
    """Penalized EM that selects the number of mixture components.

    ``pi_step="closed_form"`` uses :func:`pi_update`; ``"mm"`` uses
    :func:`pi_update_mm`, which keeps the penalized objective monotone.
    Components whose weight falls below ``1/n`` are dropped; a covariance
    hitting the eigenvalue floor twice in a row removes its component.
    The adaptive weights are refreshed from the current mixing weights after
    every drop and every ``refresh_every`` iterations.

    Returns ``(GMMModel, SelectionResult)``; the result's trace holds the
    penalized objective and its support lists surviving initial components.
    """
    from .core import SelectionResult

    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if m_max < 1:
        raise InvalidArgument("m_max must be >= 1")
    df = gmm_n_params(d)
    model = init if init is not None else init_gmm(X, m_max, _as_rng(seed))
    floor = COV_FLOOR_REL * np.trace(np.atleast_2d(np.cov(X, rowvar=False, bias=True))) / d
    ids = list(range(model.m))
    pen = LogPenaltyWeights(model.weights, epsilon)
    breaches = np.zeros(model.m, dtype=int)
    resp, ll = e_step(X, model)
    cur = _npl_value(model, pen, n, ll)
    trace, events = [(0, cur)], []
    converged, just_changed = False, False
    for it in range(1, max_iter + 1):
        nk, means, covs = _m_step_moments(X, resp)
        hit = np.zeros(len(ids), dtype=bool)
        for i in range(len(ids)):
            covs[i], hit[i] = _floor_covariance(covs[i], floor)
        breaches = np.where(hit, breaches + 1, 0)
        if len(ids) == 1:
            pi = np.ones(1)
        elif pi_step == "closed_form":
            pi = pi_update(nk, pen, n, len(ids), d)
        else:
            pi = pi_update_mm(nk, pen, model.weights, n, df)
        model = GMMModel(pi, means, covs)
        changed = []
        drop = (model.weights < 1.0 / n) | (breaches >= 2)
        if len(ids) > 1 and drop.any():
            # the step that empties a component is part of the structural change
            if drop.all():
                drop[np.argmax(model.weights)] = False
            keep = np.flatnonzero(~drop)
            for j in np.flatnonzero(drop):
                why = "collapse" if breaches[j] >= 2 else "drop"
                changed.append(f"{why} component {ids[j]}")
            ids = [ids[j] for j in keep]
            w = model.weights[keep]
            model = GMMModel(w / w.sum(), model.means[keep], model.covariances[keep])
            breaches = breaches[keep]
            if refresh_on_drop:
                pen = LogPenaltyWeights(model.weights, epsilon)
                changed.append("refresh weights")
            else:
                pen = pen.subset(keep)
        else:
            resp, ll = e_step(X, model)
            new = _npl_value(model, pen, n, ll)
            trace.append((len(trace), new))
            if refresh_every and it % refresh_every == 0 and len(ids) > 1:
                pen = LogPenaltyWeights(model.weights, epsilon)
                changed.append("refresh weights")
        if changed:
            events.extend((len(trace) - 1, c) for c in changed)
            resp, ll = e_step(X, model)
            cur = _npl_value(model, pen, n, ll)
            trace.append((len(trace), cur))
            just_changed = True
            continue
        if not just_changed and abs(new - cur) <= tol * abs(new):
            cur, converged = new, True
            break
        just_changed = False
        cur = new
    result = SelectionResult(
        support=ids,
        estimate=_scatter(model.weights, ids, m_max if init is None else init.m),
        objective=cur,
        trace=trace,
        converged=converged,
        events=events,
        info={"m": model.m, "loglik": ll, "mml_length": gmm_mml_length(model, n, ll), "iterations": it},
    )
    model.trace, model.converged, model.events = trace, converged, events
    return model, result


def _scatter(values, ids, size):
    out = np.zeros(size)
    out[list(ids)] = values
    return out
