"""Mixtures of factor analyzers: EM, the MML message length and Quick-MML selection.

All analyzers share one diagonal noise covariance. Quick-MML selects the
number of analyzers through a log penalty on the mixing weights and each
analyzer's factor count through an ALasso group penalty on its loading
columns, both with data-adaptive weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .core import WEIGHT_FLOOR, SelectionResult
from .errors import InvalidArgument, NumericFailure
from .fa import DROP_REL, LQA_EPS, PSI_FLOOR
from .gmm import DEFAULT_EPS, LogPenaltyWeights, log_gaussian, pi_update_mm


def mfa_n_params(d: int, k: int) -> int:
    """Free parameters of one analyzer: mean plus loadings up to rotation."""
    return d + d * k - k * (k - 1) // 2


@dataclass
class MFAModel:
    weights: np.ndarray
    means: np.ndarray
    loadings: list
    noise_vars: np.ndarray
    trace: list = field(default_factory=list, repr=False, compare=False)
    converged: bool = field(default=True, compare=False)
    events: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.noise_vars = np.asarray(self.noise_vars, dtype=float).ravel()
        d = self.noise_vars.size
        self.means = np.asarray(self.means, dtype=float).reshape(-1, d)
        self.loadings = [np.asarray(a, dtype=float).reshape(d, -1) for a in self.loadings]
        m = self.weights.size
        if self.means.shape[0] != m or len(self.loadings) != m:
            raise InvalidArgument("weights, means and loadings disagree on the analyzer count")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise InvalidArgument("mixing weights must lie on the simplex")
        if np.any(self.noise_vars <= 0):
            raise InvalidArgument("noise variances must be positive")

    @property
    def m(self) -> int:
        return self.weights.size

    @property
    def d(self) -> int:
        return self.noise_vars.size

    @property
    def k(self) -> tuple:
        return tuple(a.shape[1] for a in self.loadings)

    def covariance(self, i: int) -> np.ndarray:
        a = self.loadings[i]
        return a @ a.T + np.diag(self.noise_vars)

    def column_norms(self) -> list:
        return [np.linalg.norm(a, axis=0) for a in self.loadings]


def _log_dens(X, model: MFAModel) -> np.ndarray:
    out = np.empty((X.shape[0], model.m))
    for i in range(model.m):
        out[:, i] = log_gaussian(X, model.means[i], model.covariance(i))
    with np.errstate(divide="ignore"):
        return out + np.log(model.weights)


def mfa_e_step(X, model: MFAModel):
    """Responsibilities (n x m) and the log-likelihood."""
    lw = _log_dens(X, model)
    lse = logsumexp(lw, axis=1)
    return np.exp(lw - lse[:, None]), float(np.sum(lse))


def mfa_loglik(X, model: MFAModel) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return float(np.sum(logsumexp(_log_dens(X, model), axis=1)))


def mfa_mml_length(model: MFAModel, n: int, loglik: float) -> float:
    """Message length of an MFA model (constant terms dropped); sums run over nonzero weights."""
    live = np.flatnonzero(model.weights > 0)
    if live.size == 0:
        raise InvalidArgument("at least one analyzer must have positive weight")
    dfs = np.array([mfa_n_params(model.d, model.loadings[i].shape[1]) for i in live], dtype=float)
    return (
        0.5 * float(np.sum(dfs * np.log(n * model.weights[live] / 12.0)))
        + 0.5 * float(np.sum(dfs))
        + 0.5 * live.size * (math.log(n / 12.0) + 1.0)
        - loglik
    )


def nf_hat(A, anchors, d: int | None = None, k: int | None = None) -> float:
    """ALasso approximation ``k(k-1)/2 + (d-k+1) sum_j ||A_j|| / anchor_j`` of the loading count."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0] if d is None else d
    k = A.shape[1] if k is None else k
    if k == 0:
        return 0.0
    anchors = np.asarray(anchors, dtype=float).ravel()
    if anchors.size != k or np.any(anchors <= 0):
        raise InvalidArgument("need one positive anchor per loading column")
    ratio = float(np.sum(np.linalg.norm(A, axis=0) / anchors))
    return k * (k - 1) / 2.0 + (d - k + 1) * ratio


@dataclass
class MFAPenaltyState:
    """Adaptive weights of the two penalties: mixing weights and loading columns."""

    pi_weights: LogPenaltyWeights
    column_norm_anchors: list

    def __post_init__(self):
        self.column_norm_anchors = [np.asarray(a, dtype=float).ravel() for a in self.column_norm_anchors]
        if len(self.column_norm_anchors) != self.pi_weights.w.size:
            raise InvalidArgument("one anchor vector per analyzer is required")
        if any(np.any(a <= 0) for a in self.column_norm_anchors):
            raise InvalidArgument("column-norm anchors must be positive")

    @classmethod
    def from_model(cls, model: MFAModel, epsilon: float = DEFAULT_EPS) -> "MFAPenaltyState":
        anchors = [np.maximum(v, WEIGHT_FLOOR) for v in model.column_norms()]
        return cls(LogPenaltyWeights(model.weights, epsilon), anchors)

    def d_hat(self, model: MFAModel) -> np.ndarray:
        """Approximate per-analyzer parameter counts ``nf_hat(A_i) + d``."""
        return np.array(
            [nf_hat(a, c, model.d) + model.d for a, c in zip(model.loadings, self.column_norm_anchors)]
        )


def _npl_value(model: MFAModel, pen: MFAPenaltyState, n: int, loglik: float) -> float:
    dh = pen.d_hat(model)
    live = model.weights > 0
    big = dh + math.log(n / 12.0) + 1.0
    return (
        0.5 * float(np.sum(dh[live] * np.log(n * model.weights[live] / 12.0)))
        + float(np.sum(pen.pi_weights.penalty_terms(model.weights) * big))
        - loglik
    )


def mfa_npl(X, model: MFAModel, penalty: MFAPenaltyState, n: int | None = None) -> float:
    """Continuous approximation of the MFA message length."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0] if n is None else n
    return _npl_value(model, penalty, n, mfa_loglik(X, model))


def _column_coef(model: MFAModel, pen: MFAPenaltyState, n: int) -> list:
    """Per-column multiplier of ``||A_ij||`` in the npl; ``None`` for zero-weight analyzers."""
    L = pen.pi_weights.penalty_terms(model.weights)
    out = []
    for i, (a, anc) in enumerate(zip(model.loadings, pen.column_norm_anchors)):
        if model.weights[i] <= 0:
            out.append(None)
            continue
        g = 0.5 * math.log(n * model.weights[i] / 12.0) + L[i]
        out.append(g * (model.d - a.shape[1] + 1) / anc)
    return out


def mfa_npl_grad(X, model: MFAModel, penalty: MFAPenaltyState, n: int | None = None):
    """Gradient of :func:`mfa_npl` w.r.t. (weights, means, loadings, noise_vars).

    Needs every weight and every loading column to be nonzero. The weights
    are treated as free coordinates.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0] if n is None else n
    resp, _ = mfa_e_step(X, model)
    pen = penalty
    pi = model.weights
    dh = pen.d_hat(model)
    big = dh + math.log(n / 12.0) + 1.0
    w, eps = pen.pi_weights.w, pen.pi_weights.epsilon
    h = resp.sum(axis=0)
    gpi = 0.5 * dh / pi + w * big / (pi + eps) - h / pi
    coefs = _column_coef(model, pen, n)
    gmu = np.empty_like(model.means)
    ga, gpsi = [], np.zeros(model.d)
    for i in range(model.m):
        cinv = np.linalg.inv(model.covariance(i))
        r = X - model.means[i]
        hi = resp[:, i]
        gmu[i] = -cinv @ (r.T @ hi)
        scat = (r * hi[:, None]).T @ r
        G = -0.5 * (cinv @ scat @ cinv - h[i] * cinv)
        a = model.loadings[i]
        grad = 2.0 * G @ a
        if a.shape[1]:
            grad = grad + coefs[i] * a / np.linalg.norm(a, axis=0)
        ga.append(grad)
        gpsi += np.diag(G)
    return gpi, gmu, ga, gpsi


def _component_stats(X, resp_i, mean, A, psi):
    """Expected sufficient statistics of analyzer i under the augmented factor [y; 1].

    Returns ``(E, B)`` with ``E = sum_t h_t E[z z^T]`` ((k+1) x (k+1)) and
    ``B = sum_t h_t x_t E[z]^T`` (d x (k+1)).
    """
    k = A.shape[1]
    hs = float(resp_i.sum())
    r = X - mean
    if k:
        apsi = A.T / psi
        beta = np.linalg.solve(np.eye(k) + apsi @ A, apsi)
        ey = r @ beta.T
        hey = ey * resp_i[:, None]
        e11 = hs * (np.eye(k) - beta @ A) + hey.T @ ey
        E = np.empty((k + 1, k + 1))
        E[:k, :k] = 0.5 * (e11 + e11.T)
        E[:k, k] = E[k, :k] = hey.sum(axis=0)
        E[k, k] = hs
        B = (X * resp_i[:, None]).T @ np.column_stack([ey, np.ones(X.shape[0])])
    else:
        E = np.array([[hs]])
        B = (X * resp_i[:, None]).sum(axis=0)[:, None]
    return E, B


def _aug_update(E, B, psi, coef=None, A0=None):
    """Row-wise update of ``[A, mu]``; ``coef`` adds the LQA-majorized column penalty."""
    d, kp = B.shape
    k = kp - 1
    if coef is None or k == 0:
        return np.linalg.solve(E, B.T).T
    ridge = np.zeros(kp)
    ridge[:k] = coef / (2.0 * (np.linalg.norm(A0, axis=0) + LQA_EPS))
    out = np.empty((d, kp))
    for r in range(d):
        out[r] = np.linalg.solve(E + 2.0 * psi[r] * np.diag(ridge), B[r])
    return out


def _mean_update(E, B, A):
    """Mean of one analyzer with its loadings held fixed."""
    k = A.shape[1]
    return (B[:, k] - A @ E[:k, k]) / E[k, k]


def _group_shrink(s, e, psi, c):
    """Minimize ``sum_r (e a_r^2 / 2 - s_r a_r) / psi_r + c ||a||`` over the vector ``a``.

    Zero when ``||s / psi|| <= c``; otherwise ``a_r = s_r / (e + c psi_r / nu)`` with
    ``nu = ||a||`` the root of a monotone scalar equation.
    """
    if np.linalg.norm(s / psi) <= c:
        return np.zeros_like(s)

    def gap(nu):
        return float(np.linalg.norm(s / (e * nu + c * psi))) - 1.0

    hi = float(np.linalg.norm(s)) / e
    lo = hi * 1e-300 if gap(hi * 1e-12) > 0 else hi * 1e-12
    while gap(lo) <= 0:
        lo *= 1e-6
    nu = optimize.brentq(gap, lo, hi, xtol=1e-15 * hi, rtol=1e-14, maxiter=200)
    return s / (e + c * psi / nu)


def _aug_update_bcd(E, B, psi, coef, G0, sweeps=1):
    """Block coordinate descent on ``[A, mu]``: one exact column update at a time.

    Penalized loading columns get the exact group soft-threshold, so a column
    can reach zero in one step. The mean column is unpenalized.
    """
    d, kp = B.shape
    k = kp - 1
    G = G0.copy()
    for _ in range(sweeps):
        for j in range(kp):
            e = E[j, j]
            s = B[:, j] - G @ E[:, j] + G[:, j] * e
            if j == k or coef is None:
                G[:, j] = s / e
            else:
                G[:, j] = _group_shrink(s, e, psi, coef[j])
    return G


def _psi_from(sxx, stats, aug, n):
    psi = sxx.copy()
    for (E, B), G in zip(stats, aug):
        psi -= 2.0 * np.einsum("ij,ij->i", G, B) - np.einsum("ij,jk,ik->i", G, E, G)
    return psi / n


def _m_step(X, resp, model, weights, coefs=None, active=None, a_step="lqa"):
    """ECM sweep: augmented loadings and means per analyzer, then the shared noise.

    ``a_step`` picks the penalized loading update: ``"lqa"`` (local quadratic
    approximation, closed form per row) or ``"bcd"`` (exact column-wise group
    soft-thresholding).
    """
    n = X.shape[0]
    stats, aug = [], []
    for i in range(model.m):
        A = model.loadings[i]
        E, B = _component_stats(X, resp[:, i], model.means[i], A, model.noise_vars)
        stats.append((E, B))
        if active is not None and not active[i]:
            aug.append(np.column_stack([A, model.means[i]]))
            continue
        c = None if coefs is None else coefs[i]
        if c is not None and np.any(c < 0):
            # nearly empty analyzer: the npl decreases without bound as its
            # columns grow, so only the mean moves
            aug.append(np.column_stack([A, _mean_update(E, B, A)]))
            continue
        try:
            if a_step == "bcd" and c is not None:
                g0 = np.column_stack([A, model.means[i]])
                aug.append(_aug_update_bcd(E, B, model.noise_vars, c, g0))
            else:
                aug.append(_aug_update(E, B, model.noise_vars, c, A))
        except np.linalg.LinAlgError as exc:
            raise NumericFailure(f"singular M step for analyzer {i}") from exc
    psi = _psi_from(np.sum(X * X, axis=0), stats, aug, n)
    clamped = bool(np.any(psi < PSI_FLOOR))
    psi = np.maximum(psi, PSI_FLOOR)
    loadings = [g[:, :-1] for g in aug]
    means = np.array([g[:, -1] for g in aug])
    return MFAModel(weights, means, loadings, psi), clamped


def init_mfa(X, m: int, k, rng: np.random.Generator) -> MFAModel:
    """Seeded start: means drawn from the data, then one hard assignment and local PCA.

    The base covariance is the sample covariance shrunk by ``m^(2/d)``; each
    analyzer's covariance blends its local scatter with it. Loadings are the
    leading eigenvectors scaled to the eigenvalue excess over the mean noise.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    ks = np.broadcast_to(np.asarray(k, dtype=int), (m,))
    if m > n:
        raise InvalidArgument("more analyzers than data points")
    means = X[rng.choice(n, size=m, replace=False)].copy()
    base = np.atleast_2d(np.cov(X, rowvar=False, bias=True)) / m ** (2.0 / d)
    if not ks.any():
        return MFAModel(np.full(m, 1.0 / m), means, [np.zeros((d, 0))] * m, np.diag(base).copy())
    d2 = np.sum((X[:, None, :] - means[None]) ** 2, axis=2)
    lab = np.argmin(d2, axis=1)
    covs = []
    for i in range(m):
        pts = X[lab == i]
        if pts.shape[0] > 1:
            loc = (pts - means[i]).T @ (pts - means[i])
            covs.append((loc + d * base) / (pts.shape[0] + d))
        else:
            covs.append(base)
    psi = 0.5 * np.mean([np.diag(c) for c in covs], axis=0)
    loadings = []
    for c, ki in zip(covs, ks):
        vals, vecs = np.linalg.eigh(c)
        vals, vecs = vals[::-1][:ki], vecs[:, ::-1][:, :ki]
        scale = np.sqrt(np.maximum(vals - psi.mean(), 0.05 * vals))
        loadings.append(vecs * scale)
    return MFAModel(np.full(m, 1.0 / m), means, loadings, psi)


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def mfa_em_fit(
    X, m: int, k, tol: float = 1e-7, max_iter: int = 2000, *, seed=0, init: MFAModel | None = None
) -> MFAModel:
    """Maximum-likelihood MFA by EM (one E step, then means/loadings and the shared noise).

    The returned model carries the log-likelihood trace; a noise variance
    under the floor is clamped and logged as an event.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    ks = np.broadcast_to(np.asarray(k, dtype=int), (m,))
    if m < 1 or np.any(ks < 0) or np.any(ks > d):
        raise InvalidArgument("need m >= 1 and 0 <= k_i <= d")
    model = init if init is not None else init_mfa(X, m, ks, _as_rng(seed))
    resp, ll = mfa_e_step(X, model)
    trace, events, converged = [(0, ll)], [], False
    for it in range(1, max_iter + 1):
        h = resp.sum(axis=0)
        model, clamped = _m_step(X, resp, model, h / h.sum())
        if clamped:
            events.append((it, "noise floor"))
        resp, new = mfa_e_step(X, model)
        trace.append((it, new))
        if abs(new - ll) <= tol * abs(new):
            ll, converged = new, True
            break
        ll = new
    model.trace, model.converged, model.events = trace, converged, events
    return model


def quick_mml_mfa(
    X,
    m_init: int = 30,
    k_init: int = 3,
    seed=0,
    *,
    epsilon: float = DEFAULT_EPS,
    tol: float = 1e-7,
    max_iter: int = 3000,
    refresh_every: int = 50,
    drop_rel: float = DROP_REL,
    warmup: int = 100,
    refresh: str = "refit",
    refit_iter: int = 20,
    a_step: str = "lqa",
    periodic_anchors: bool = True,
    init: MFAModel | None = None,
):
    """Penalized EM selecting the number of analyzers and every local factor count.

    Each iteration runs the E step, the mixing-weight step (tangent majorizer
    of the log penalty with per-analyzer approximate parameter counts), the
    loading/mean step with the group penalty majorized per column, and the
    shared-noise step. Then, in order: columns whose norm falls below
    ``drop_rel`` times their anchor are removed, analyzers with weight below
    ``1/n`` are removed, and the anchors and log-penalty weights are reset
    from the current model. A reset also happens every ``refresh_every``
    iterations. ``refresh`` chooses the anchor source (see :func:`_refreshed`);
    with ``periodic_anchors=False`` the periodic resets keep the column
    anchors and only renew the log-penalty weights.

    An analyzer whose column coefficient is negative (weight below roughly
    ``D_i/(2n)``) has a penalized objective unbounded below in its loadings,
    so its loadings are held fixed and only its mean moves until it is
    dropped. ``a_step="bcd"`` replaces the per-column majorized loading step
    by exact block coordinate descent with group soft thresholding.

    The adaptive weights need a rough ML estimate: unless ``init`` is given,
    ``warmup`` plain EM iterations from :func:`init_mfa` supply the starting
    model and the first anchors.

    Returns ``(MFAModel, SelectionResult)``; the result's support lists the
    surviving initial analyzers, ``info["k"]`` their factor counts.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if m_init < 1:
        raise InvalidArgument("m_init must be >= 1")
    if not 0 <= k_init <= d:
        raise InvalidArgument(f"need 0 <= k_init <= d, got {k_init}")
    if init is None:
        model = init_mfa(X, m_init, k_init, _as_rng(seed))
        if warmup:
            model = mfa_em_fit(X, m_init, k_init, max_iter=warmup, init=model)
    else:
        model = init
    m0 = model.m
    ids = list(range(m0))
    pen = MFAPenaltyState.from_model(model, epsilon)
    resp, ll = mfa_e_step(X, model)
    cur = _npl_value(model, pen, n, ll)
    trace, events = [(0, cur)], []
    converged = just_changed = False
    for it in range(1, max_iter + 1):
        h = resp.sum(axis=0)
        if model.m == 1:
            pi = np.ones(1)
        else:
            pi = pi_update_mm(h, pen.pi_weights, model.weights, n, pen.d_hat(model))
        model = MFAModel(pi, model.means, model.loadings, model.noise_vars)
        active = pi >= 1.0 / n
        coefs = [c if ok else None for c, ok in zip(_column_coef(model, pen, n), active)]
        model, clamped = _m_step(X, resp, model, pi, coefs, active, a_step)

        changed = []
        if clamped:
            changed.append("noise floor")
        anchors = list(pen.column_norm_anchors)
        for i in range(model.m):
            a = model.loadings[i]
            gone = np.linalg.norm(a, axis=0) < drop_rel * anchors[i]
            if gone.any():
                model.loadings[i] = a[:, ~gone]
                anchors[i] = anchors[i][~gone]
                changed.append(f"drop {int(gone.sum())} column(s) of analyzer {ids[i]}")
        drop = model.weights < 1.0 / n
        if model.m > 1 and drop.any():
            if drop.all():
                drop[np.argmax(model.weights)] = False
            keep = np.flatnonzero(~drop)
            changed.extend(f"drop analyzer {ids[j]}" for j in np.flatnonzero(drop))
            ids = [ids[j] for j in keep]
            anchors = [anchors[j] for j in keep]
            w = model.weights[keep]
            model = MFAModel(w / w.sum(), model.means[keep], [model.loadings[j] for j in keep], model.noise_vars)
        if not changed:
            resp, ll = mfa_e_step(X, model)
            new = _npl_value(model, pen, n, ll)
            trace.append((len(trace), new))
            if refresh_every and it % refresh_every == 0:
                changed.append("periodic")
        if changed:
            structural = changed != ["periodic"]
            mode = refresh if structural or periodic_anchors else "weights"
            pen = _refreshed(X, model, anchors, mode, refit_iter, epsilon)
            changed.append("refresh weights")
            events.extend((len(trace) - 1, c) for c in changed)
            resp, ll = mfa_e_step(X, model)
            cur = _npl_value(model, pen, n, ll)
            trace.append((len(trace), cur))
            just_changed = True
            continue
        if not just_changed and abs(new - cur) <= tol * abs(new):
            cur, converged = new, True
            break
        just_changed = False
        cur = new
    est = np.zeros(m0)
    est[ids] = model.weights
    result = SelectionResult(
        support=ids,
        estimate=est,
        objective=cur,
        trace=trace,
        converged=converged,
        events=events,
        info={
            "m": model.m,
            "k": list(model.k),
            "loglik": ll,
            "mml_length": mfa_mml_length(model, n, ll),
            "iterations": it,
        },
    )
    model.trace, model.converged, model.events = trace, converged, events
    return model, result


def _refreshed(X, model, anchors, mode, refit_iter, epsilon) -> MFAPenaltyState:
    """New adaptive weights after a structural change.

    ``"refit"`` takes anchors and mixing-weight anchors from a short ML refit
    started at the current model (the penalized iterate itself is kept);
    ``"current"`` takes them from the current iterate; ``"weights"`` keeps
    the column anchors and only resets the log-penalty weights.
    """
    if mode == "refit":
        ref = mfa_em_fit(X, model.m, list(model.k), max_iter=refit_iter, init=model)
        return MFAPenaltyState.from_model(ref, epsilon)
    if mode == "current":
        return MFAPenaltyState.from_model(model, epsilon)
    if mode == "weights":
        return MFAPenaltyState(LogPenaltyWeights(model.weights, epsilon), anchors)
    raise InvalidArgument(f"unknown refresh mode {mode!r}")
