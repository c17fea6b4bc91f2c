"""Information-criterion algebra and the adaptive-Lasso thresholding rules.

Everything here is a pure function of its inputs. The selectors in the
model-specific modules (:mod:`quickic.linreg`, :mod:`quickic.fa`, ...) build
on these primitives.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument, NumericFailure

WEIGHT_FLOOR = 1e-12
COND_LIMIT = 1e12


class ICKind(str, enum.Enum):
    BIC = "BIC"
    AIC = "AIC"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class ICSpec:
    """Which information criterion to emulate.

    ``custom_lambda`` is only read when ``kind`` is ``ICKind.CUSTOM``.
    """

    kind: ICKind = ICKind.BIC
    custom_lambda: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ICKind(self.kind))
        if self.kind is ICKind.CUSTOM:
            if self.custom_lambda is None or not self.custom_lambda >= 0:
                raise InvalidArgument("Custom IC requires custom_lambda >= 0")

    @classmethod
    def bic(cls) -> "ICSpec":
        return cls(ICKind.BIC)

    @classmethod
    def aic(cls) -> "ICSpec":
        return cls(ICKind.AIC)

    @classmethod
    def custom(cls, lam: float) -> "ICSpec":
        return cls(ICKind.CUSTOM, float(lam))

    @classmethod
    def parse(cls, text: str) -> "ICSpec":
        """``"BIC"``, ``"AIC"`` or a bare number for a custom lambda."""
        t = str(text).strip()
        if t.upper() in ("BIC", "AIC"):
            return cls(ICKind(t.upper()))
        return cls.custom(float(t))


def lambda_ic(spec: ICSpec, n: int) -> float:
    """Per-parameter price of the criterion at sample size ``n``."""
    if n < 1:
        raise InvalidArgument(f"sample count must be >= 1, got {n}")
    if spec.kind is ICKind.BIC:
        return 0.5 * math.log(n)
    if spec.kind is ICKind.AIC:
        return 1.0
    return float(spec.custom_lambda)


def ic_score(loglik: float, d_free: int, lam: float) -> float:
    return -float(loglik) + float(lam) * d_free


@dataclass(frozen=True)
class ALassoPenalty:
    """Adaptive-Lasso penalty with weights ``1/|init_estimate|**gamma``."""

    init_estimate: np.ndarray
    gamma: float = 1.0
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        est = np.atleast_1d(np.asarray(self.init_estimate, dtype=float))
        if self.gamma <= 0:
            raise InvalidArgument("gamma must be positive")
        if not np.all(np.isfinite(est)):
            raise InvalidArgument("initial estimate has non-finite entries")
        small = np.flatnonzero(np.abs(est) < WEIGHT_FLOOR)
        if small.size:
            raise InvalidArgument(
                f"initial estimate entries {small.tolist()} are below the weight floor "
                f"{WEIGHT_FLOOR:g}; screen them out before building the penalty"
            )
        est.setflags(write=False)
        w = np.abs(est) ** (-self.gamma)
        w.setflags(write=False)
        object.__setattr__(self, "init_estimate", est)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.init_estimate.size


def alasso_penalty_value(theta, pen: ALassoPenalty) -> float:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != pen.init_estimate.shape:
        raise InvalidArgument(
            f"theta has length {theta.size}, penalty expects {pen.init_estimate.size}"
        )
    return float(np.sum(pen.weights * np.abs(theta)))


def soft_threshold_diagonal(theta_hat_i: float, h_ii: float, lambda_ic: float) -> float:
    """Maximizer of ``-h/2 (t - theta_hat)^2 - 2 lambda |t|/|theta_hat|``."""
    if theta_hat_i == 0:
        raise InvalidArgument("theta_hat_i = 0 leaves the adaptive weight undefined")
    if not h_ii > 0:
        raise InvalidArgument("h_ii must be positive")
    a = abs(theta_hat_i)
    shrunk = a - 2.0 * lambda_ic / (h_ii * a)
    # Evaluate the threshold through the selection rule so both agree exactly.
    if not selection_condition_diagonal(theta_hat_i, h_ii, lambda_ic):
        return 0.0
    return math.copysign(max(shrunk, 0.0), theta_hat_i)


def selection_condition_diagonal(theta_hat_i: float, h_ii: float, lambda_ic: float) -> bool:
    if theta_hat_i == 0:
        raise InvalidArgument("theta_hat_i = 0 leaves the adaptive weight undefined")
    if not h_ii > 0:
        raise InvalidArgument("h_ii must be positive")
    return h_ii * theta_hat_i * theta_hat_i > 2.0 * lambda_ic


def _sym_inverse(mat: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric matrix via its eigendecomposition, with a condition guard."""
    vals, vecs = np.linalg.eigh(mat)
    amax = np.max(np.abs(vals))
    amin = np.min(np.abs(vals))
    if amin == 0 or amax / amin > COND_LIMIT:
        raise NumericFailure(f"matrix is singular or ill-conditioned (cond > {COND_LIMIT:g})")
    return (vecs / vals) @ vecs.T


@dataclass(frozen=True)
class QuadraticLikelihood:
    """Log-likelihood that is exactly quadratic around its maximizer.

    ``l(theta) = loglik_at_mle - 1/2 (theta - mle)^T H (theta - mle)``
    """

    mle: np.ndarray
    hessian: np.ndarray
    loglik_at_mle: float = 0.0

    def __post_init__(self):
        mle = np.atleast_1d(np.asarray(self.mle, dtype=float)).copy()
        h = np.atleast_2d(np.asarray(self.hessian, dtype=float)).copy()
        if h.shape != (mle.size, mle.size):
            raise InvalidArgument(f"hessian shape {h.shape} does not match mle length {mle.size}")
        scale = max(np.max(np.abs(h)), np.finfo(float).tiny)
        if np.max(np.abs(h - h.T)) > 1e-10 * scale:
            raise InvalidArgument("hessian is not symmetric")
        h = 0.5 * (h + h.T)
        if np.linalg.eigvalsh(h)[0] <= 0:
            raise InvalidArgument("hessian is not positive definite")
        mle.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "mle", mle)
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "loglik_at_mle", float(self.loglik_at_mle))

    @property
    def dim(self) -> int:
        return self.mle.size

    def loglik(self, theta) -> float:
        diff = np.asarray(theta, dtype=float) - self.mle
        if not diff.any():
            return self.loglik_at_mle
        return self.loglik_at_mle - 0.5 * float(diff @ self.hessian @ diff)

    def inverse_hessian(self) -> np.ndarray:
        return _sym_inverse(self.hessian)

    def scaled_hessian(self) -> np.ndarray:
        """``diag(mle) H diag(mle)``, the curvature in ratio coordinates theta/mle."""
        return self.mle[:, None] * self.hessian * self.mle[None, :]


def saliency(ql: QuadraticLikelihood, i: int) -> float:
    """Smallest log-likelihood drop caused by forcing parameter ``i`` to zero."""
    if not 0 <= i < ql.dim:
        raise InvalidArgument(f"index {i} out of range for dimension {ql.dim}")
    hinv = ql.inverse_hessian()
    return 0.5 * ql.mle[i] ** 2 / hinv[i, i]


def saliencies(ql: QuadraticLikelihood) -> np.ndarray:
    hinv = ql.inverse_hessian()
    return 0.5 * ql.mle**2 / np.diag(hinv)


def _scaled_inverse(ql: QuadraticLikelihood) -> np.ndarray:
    if np.any(np.abs(ql.mle) < WEIGHT_FLOOR):
        raise InvalidArgument("all MLE entries must be nonzero")
    return _sym_inverse(ql.scaled_hessian())


def prop2_ic_selection(ql: QuadraticLikelihood, lambda_ic: float) -> frozenset:
    """Indices kept by backward-elimination IC selection (diagonal of the scaled inverse)."""
    ht_inv = _scaled_inverse(ql)
    thresh = 1.0 / (2.0 * lambda_ic)
    return frozenset(int(i) for i in np.flatnonzero(np.diag(ht_inv) < thresh))


def prop2_quickic_selection(ql: QuadraticLikelihood, lambda_ic: float) -> frozenset:
    """Indices kept by backward-elimination Quick-IC (row sums of the scaled inverse)."""
    ht_inv = _scaled_inverse(ql)
    thresh = 1.0 / (2.0 * lambda_ic)
    return frozenset(int(i) for i in np.flatnonzero(ht_inv.sum(axis=1) < thresh))


@dataclass
class EliminationSweep:
    lambdas: np.ndarray
    active: np.ndarray  # (len(lambdas), dim) boolean
    ratios: np.ndarray  # theta / mle along the sweep
    violations: list = field(default_factory=list)  # (lambda, index) re-entry wishes

    @property
    def final_support(self) -> frozenset:
        return frozenset(int(i) for i in np.flatnonzero(self.active[-1]))


def backward_elimination_sweep(
    ql: QuadraticLikelihood, lam_max: float, num: int = 2001, resolve: bool = False
) -> EliminationSweep:
    """Sweep the penalization parameter upward from 0 to ``lam_max``.

    Parameters are dropped for good once their ratio ``theta_i / mle_i``
    reaches zero. With ``resolve=False`` the ratios follow the all-active
    stationary point ``1 - lam * rowsum(inv(H~))``; with ``resolve=True`` the
    stationary point is recomputed on the current active set. In both modes a
    dropped coordinate whose subgradient condition would let it re-enter is
    logged in ``violations`` rather than re-activated.
    """
    ht = ql.scaled_hessian()
    dim = ql.dim
    ones = np.ones(dim)
    ht_inv_rows = _scaled_inverse(ql).sum(axis=1)
    lambdas = np.linspace(0.0, lam_max, num)
    active = np.ones(dim, dtype=bool)
    act_hist = np.empty((num, dim), dtype=bool)
    ratio_hist = np.empty((num, dim))
    violations = []
    for s, lam in enumerate(lambdas):
        if resolve and not active.all():
            r = np.zeros(dim)
            a = active
            if a.any():
                haa = ht[np.ix_(a, a)]
                rhs = haa @ ones[a] - lam * ones[a]
                r[a] = np.linalg.solve(haa, rhs)
        else:
            r = 1.0 - lam * ht_inv_rows
        r = np.where(active, r, 0.0)
        active = active & (r > 0)
        r = np.where(active, r, 0.0)
        # gradient of J in ratio coordinates at a pinned-zero coordinate
        grad = -(ht @ (r - ones)) - lam
        for j in np.flatnonzero(~active & (grad > 1e-12 * max(1.0, lam))):
            violations.append((float(lam), int(j)))
        act_hist[s] = active
        ratio_hist[s] = r
    return EliminationSweep(lambdas, act_hist, ratio_hist, violations)


@dataclass
class SelectionResult:
    """Outcome of a selector.

    ``objective`` and ``trace`` are always on the minimization scale
    (negative penalized log-likelihood or an IC score), so a healthy trace is
    non-increasing. ``events`` lists structural changes (drops, refreshes) as
    ``(iteration, description)``; trace monotonicity only holds between them.
    """

    support: tuple
    estimate: np.ndarray
    objective: float
    trace: list = field(default_factory=list)
    converged: bool = True
    events: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.support = tuple(sorted(int(i) for i in self.support))
        self.estimate = np.asarray(self.estimate, dtype=float)

    @property
    def size(self) -> int:
        return len(self.support)


def trace_segments(result: SelectionResult) -> list:
    """Split the objective trace at structural events.

    Returns a list of objective arrays, one per stretch of iterations that
    saw no structural change.
    """
    cuts = sorted({it for it, _ in result.events})
    segs, cur, ci = [], [], 0
    for it, obj in result.trace:
        while ci < len(cuts) and it > cuts[ci]:
            if cur:
                segs.append(np.asarray(cur))
            cur = []
            ci += 1
        cur.append(obj)
    if cur:
        segs.append(np.asarray(cur))
    return segs


def is_nonincreasing(values: Sequence[float], rtol: float = 0.0, atol: float = 0.0) -> bool:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return True
    tol = atol + rtol * np.abs(v[:-1])
    return bool(np.all(np.diff(v) <= tol))
