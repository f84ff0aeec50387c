"""Semi-parametric estimation for multiplicative count models.

Three quasi-likelihood estimators (Poisson "pq", negative-binomial "nq",
exponential "eq") and a two-stage weighted least-squares estimator ("1w" /
"2w") for the linear conditional-mean recursion, together with the
innovation-variance estimator, sandwich standard errors and the shared
gradient recursion.  All of them work on the observable mean path started
at the sample mean of the series.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter, lfiltic
from scipy.special import xlogy

from .errors import DomainError, EstimationError
from .model import (
    EstimationWarning,
    MeanSpec,
    _init_vector,
    conditional_mean_path,
    moment_estimate_11,
)
from .operators import POISSON_OP, OperatorSpec

_QMLE_KINDS = ("pq", "nq", "eq")
_WLS_KINDS = ("1w", "2w")

# weights below this are clamped when inverting conditional variances
WEIGHT_FLOOR = 1e-8


@dataclass(frozen=True)
class EstimatorKind:
    """Estimator selector: kind in {"pq","nq","eq","1w","2w"}; nq_r is the
    shape constant of the negative-binomial quasi-likelihood."""

    kind: str
    nq_r: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in _QMLE_KINDS + _WLS_KINDS:
            raise DomainError(f"unknown estimator kind {self.kind!r}")
        if not self.nq_r > 0.0:
            raise DomainError("nq_r must be positive")


PQ = EstimatorKind("pq")
NQ = EstimatorKind("nq")
EQ = EstimatorKind("eq")
W1 = EstimatorKind("1w")
W2 = EstimatorKind("2w")


def _as_kind(kind) -> EstimatorKind:
    if isinstance(kind, EstimatorKind):
        return kind
    return EstimatorKind(str(kind))


@dataclass(frozen=True)
class FitOptions:
    """Optimizer controls.

    Convergence is declared when the optimizer reports success or the final
    gradient norm (per observation, transformed space) is below grad_tol.
    simplex_margin keeps sum(a) + sum(b) <= 1 - simplex_margin.
    """

    param_tol: float = 1e-8
    grad_tol: float = 1e-6
    max_iter: int = 10_000
    simplex_margin: float = 1e-3


@dataclass
class FitResult:
    method: str
    nq_r: float
    order: tuple[int, int]
    operator: OperatorSpec
    mean_hat: MeanSpec
    theta_hat: np.ndarray
    sigma2_hat: float
    ase: np.ndarray | None
    fitted_means: np.ndarray
    objective_value: float
    converged: bool
    iterations: int
    init_used: MeanSpec | None = None
    warnings: list[str] = field(default_factory=list)
    stage1: "FitResult | None" = None


# ---------------------------------------------------------------------------
# series handling and the shared recursion pieces


def _check_series(series, min_len: int = 1) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise DomainError("series must be one-dimensional")
    if x.size < min_len:
        raise DomainError(f"series of length {x.size} is too short (need >= {min_len})")
    if not np.all(np.isfinite(x)):
        raise DomainError("series contains non-finite values")
    if (x < 0).any() or not np.array_equal(x, np.rint(x)):
        raise DomainError("series must contain non-negative integers")
    return x


def _mean_path(mean: MeanSpec, x: np.ndarray, init_val: float) -> np.ndarray:
    """Linear mean recursion with constant startup value, no validation."""
    n = x.size
    p, q = mean.p, mean.q
    c = np.full(n, mean.a0)
    if p:
        xs = np.concatenate([np.full(p, init_val), x])
        for i in range(1, p + 1):
            c += mean.a[i - 1] * xs[p - i : p - i + n]
    if q == 0:
        return c
    a_poly = np.concatenate([[1.0], -np.asarray(mean.b)])
    zi = lfiltic([1.0], a_poly, np.full(q, init_val))
    m, _ = lfilter([1.0], a_poly, c, zi=zi)
    return m


def _grad_path(mean: MeanSpec, x: np.ndarray, m: np.ndarray, init_val: float) -> np.ndarray:
    """d M_t / d theta, rows t, columns (a0, a_1..a_p, b_1..b_q).

    Satisfies grad_t = (1, X_{t-1..t-p}, M_{t-1..t-q}) + sum_j b_j grad_{t-j}
    with zero startup (the startup means are constants).
    """
    n = x.size
    p, q = mean.p, mean.q
    base = np.empty((n, 1 + p + q))
    base[:, 0] = 1.0
    if p:
        xs = np.concatenate([np.full(p, init_val), x])
        for i in range(1, p + 1):
            base[:, i] = xs[p - i : p - i + n]
    if q:
        ms = np.concatenate([np.full(q, init_val), m])
        for j in range(1, q + 1):
            base[:, p + j] = ms[q - j : q - j + n]
        a_poly = np.concatenate([[1.0], -np.asarray(mean.b)])
        return lfilter([1.0], a_poly, base, axis=0)
    return base


def mean_gradient_path(mean: MeanSpec, series, x_init=None, m_init=None) -> np.ndarray:
    """Gradient of the observable mean path with respect to theta.

    Startup values follow :func:`cmem.model.conditional_mean_path`; only the
    linear response is differentiable here.
    """
    if mean.softplus_c is not None:
        raise DomainError("gradients are available for the linear response only")
    if x_init is not None or m_init is not None:
        # general startup: reuse the public recursion for the means
        m = conditional_mean_path(mean, series, x_init=x_init, m_init=m_init)
        x = _check_series(series)
        n = x.size
        p, q = mean.p, mean.q
        base = np.empty((n, 1 + p + q))
        base[:, 0] = 1.0
        xi = _init_vector(x_init, p, float(x.mean()), "x_init")
        mi = _init_vector(m_init, q, float(x.mean()), "m_init")
        if p:
            xs = np.concatenate([xi[::-1], x])
            for i in range(1, p + 1):
                base[:, i] = xs[p - i : p - i + n]
        if q:
            ms = np.concatenate([mi[::-1], m])
            for j in range(1, q + 1):
                base[:, p + j] = ms[q - j : q - j + n]
            a_poly = np.concatenate([[1.0], -np.asarray(mean.b)])
            return lfilter([1.0], a_poly, base, axis=0)
        return base
    x = _check_series(series)
    m = _mean_path(mean, x, float(x.mean()))
    return _grad_path(mean, x, m, float(x.mean()))


# ---------------------------------------------------------------------------
# quasi-likelihood objectives


def _objective_sum(kind: str, r: float, x: np.ndarray, m: np.ndarray) -> float:
    if kind == "pq":
        return float(np.sum(xlogy(x, m) - m))
    if kind == "nq":
        return float(np.sum(xlogy(x, m) - (r + x) * np.log(r + m)))
    return float(np.sum(-np.log(m) - x / m))


def _dl_dm(kind: str, r: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    if kind == "pq":
        return x / m - 1.0
    if kind == "nq":
        return x / m - (r + x) / (r + m)
    return (x - m) / (m * m)


def qmle_objective(kind, mean: MeanSpec, series, x_init=None, m_init=None) -> float:
    """Quasi-log-likelihood (sum over observations) at a given mean spec."""
    k = _as_kind(kind)
    if k.kind not in _QMLE_KINDS:
        raise DomainError(f"{k.kind!r} is not a quasi-likelihood estimator")
    x = _check_series(series)
    m = conditional_mean_path(mean, x, x_init=x_init, m_init=m_init)
    return _objective_sum(k.kind, k.nq_r, x, m)


# ---------------------------------------------------------------------------
# parameter transform: log a0, additive-logistic map for (a, b)


class _Transform:
    def __init__(self, p: int, q: int, margin: float):
        self.p, self.q = p, q
        self.cap = 1.0 - margin

    def to_theta(self, u: np.ndarray) -> np.ndarray:
        theta = np.empty_like(u)
        theta[0] = math.exp(u[0])
        if u.size > 1:
            e = np.exp(u[1:])
            theta[1:] = self.cap * e / (1.0 + e.sum())
        return theta

    def to_u(self, theta: np.ndarray) -> np.ndarray:
        u = np.empty_like(theta)
        a0 = min(max(theta[0], 1e-8), 1e6)
        u[0] = math.log(a0)
        if theta.size > 1:
            w = np.maximum(theta[1:], 1e-8)
            s = w.sum()
            limit = self.cap * (1.0 - 1e-6)
            if s > limit:
                w = w * (limit / s)
                s = limit
            u[1:] = np.log(w) - math.log(self.cap - s)
        return u

    def grad_to_u(self, theta: np.ndarray, g_theta: np.ndarray) -> np.ndarray:
        g = np.empty_like(g_theta)
        g[0] = theta[0] * g_theta[0]
        if theta.size > 1:
            w = theta[1:]
            gw = g_theta[1:]
            g[1:] = w * gw - (w / self.cap) * float(w @ gw)
        return g

    def bounds(self):
        return [(math.log(1e-8), math.log(1e6))] + [(-35.0, 35.0)] * (self.p + self.q)


def _default_init(x: np.ndarray, p: int, q: int, warn_sink: list[str]) -> MeanSpec:
    if (p, q) == (1, 1):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", EstimationWarning)
            init = moment_estimate_11(x)
        warn_sink.extend(str(w.message) for w in caught)
        return init
    xbar = max(float(x.mean()), 1e-4)
    a = tuple(0.3 / p for _ in range(p)) if p else ()
    b = tuple(0.2 / q for _ in range(q)) if q else ()
    return MeanSpec(a0=xbar * (1.0 - sum(a) - sum(b)), a=a, b=b)


def _run_optimizer(neg_fun, init_mean: MeanSpec, p: int, q: int, opts: FitOptions):
    tr = _Transform(p, q, opts.simplex_margin)
    u0 = tr.to_u(init_mean.theta)
    res = minimize(
        neg_fun,
        u0,
        args=(tr,),
        jac=True,
        method="L-BFGS-B",
        bounds=tr.bounds(),
        options={"maxiter": opts.max_iter, "ftol": 1e-13, "gtol": 1e-8},
    )
    theta = tr.to_theta(res.x)
    grad_norm = float(np.max(np.abs(res.jac))) if np.ndim(res.jac) else float(abs(res.jac))
    converged = bool(res.success or grad_norm < opts.grad_tol)
    return theta, converged, int(res.nit), res


def fit_qmle(
    kind,
    series,
    order: tuple[int, int] = (1, 1),
    operator: OperatorSpec = POISSON_OP,
    init: MeanSpec | None = None,
    options: FitOptions | None = None,
) -> FitResult:
    """Maximize a quasi-log-likelihood over the stationary parameter region.

    The reported sigma2 and standard errors use the conditional-variance
    form of ``operator``; the parameter estimates themselves do not depend
    on it.
    """
    k = _as_kind(kind)
    if k.kind not in _QMLE_KINDS:
        raise DomainError(f"{k.kind!r} is not a quasi-likelihood estimator; use fit_wlse")
    p, q = order
    if p < 0 or q < 0:
        raise DomainError("order components must be non-negative")
    x = _check_series(series, min_len=10 + 5 * (p + q))
    opts = options or FitOptions()
    warn_list: list[str] = []
    init_mean = init if init is not None else _default_init(x, p, q, warn_list)
    if init_mean.p != p or init_mean.q != q:
        raise DomainError("init has a different order than requested")
    xbar = float(x.mean())
    n = x.size

    def neg_fun(u, tr):
        theta = tr.to_theta(u)
        mean = MeanSpec.from_theta(theta, p, q)
        m = _mean_path(mean, x, xbar)
        val = _objective_sum(k.kind, k.nq_r, x, m) / n
        G = _grad_path(mean, x, m, xbar)
        g_theta = (G * _dl_dm(k.kind, k.nq_r, x, m)[:, None]).sum(axis=0) / n
        return -val, -tr.grad_to_u(theta, g_theta)

    theta_hat, converged, nit, _ = _run_optimizer(neg_fun, init_mean, p, q, opts)
    if not converged:
        warn_list.append("optimizer did not converge within tolerances")
    mean_hat = MeanSpec.from_theta(theta_hat, p, q)
    fitted = conditional_mean_path(mean_hat, x)
    sigma2, lam_ase = estimate_sigma2(operator, x, fitted)
    if sigma2 < 0.0:
        warn_list.append(f"innovation variance estimate is negative ({sigma2:.4g})")
    ase_theta = sandwich_se(k, mean_hat, sigma2, x, operator)
    return FitResult(
        method=k.kind,
        nq_r=k.nq_r,
        order=(p, q),
        operator=operator,
        mean_hat=mean_hat,
        theta_hat=theta_hat,
        sigma2_hat=sigma2,
        ase=np.concatenate([ase_theta, [lam_ase]]),
        fitted_means=fitted,
        objective_value=_objective_sum(k.kind, k.nq_r, x, fitted),
        converged=converged,
        iterations=nit,
        init_used=init_mean,
        warnings=warn_list,
    )


# ---------------------------------------------------------------------------
# innovation variance and conditional variance


def _nu_path(op: OperatorSpec, m: np.ndarray) -> np.ndarray:
    if op.kind == "poisson":
        return m.copy()
    if op.kind == "nb":
        return m * (1.0 + m)
    if op.kind == "binomial":
        fr = m - np.floor(m)
        return fr * (1.0 - fr)
    return op.zip_kappa * m


def conditional_variance(op: OperatorSpec, fitted_means, sigma2: float) -> np.ndarray:
    """V[X_t | past] = nu(M_t) + sigma2 * M_t^2 along a mean path."""
    m = np.asarray(fitted_means, dtype=float)
    if (m <= 0.0).any():
        raise DomainError("fitted means must be positive")
    return _nu_path(op, m) + sigma2 * m * m


def estimate_sigma2(op: OperatorSpec, series, fitted_means) -> tuple[float, float]:
    """Moment estimator of the innovation variance and its standard error.

    Returns (sigma2_hat, ase).  The estimator matches the assumed operator:
    under "nb" it equals the "poisson" value minus one; under "binomial" the
    operator part of the variance is the bounded fractional term.  A negative
    estimate is returned as-is (callers decide how to react).  The standard
    error is sqrt(Lambda_hat / n) with Lambda_hat the empirical second moment
    of the defining summand.
    """
    if op.kind == "zip":
        raise DomainError("innovation-variance estimation is not defined for the zip operator")
    x = _check_series(series)
    m = np.asarray(fitted_means, dtype=float)
    if m.shape != x.shape:
        raise DomainError("series and fitted_means must have the same length")
    if (m <= 0.0).any():
        raise DomainError("fitted means must be positive")
    n = x.size
    r2 = (x - m) ** 2
    if op.kind == "binomial":
        fr = m - np.floor(m)
        nu_term = fr * (1.0 - fr)
        sigma2 = float(np.mean((r2 - nu_term) / (m * m)))
        v = nu_term + sigma2 * m * m
    else:
        s2_poi = float(np.mean((r2 - m) / (m * m)))
        sigma2 = s2_poi if op.kind == "poisson" else s2_poi - 1.0
        # under either kind the plug-in v_t equals m + s2_poi m^2
        v = m + s2_poi * m * m
    summand = (r2 - v) / (m * m)
    lam = float(np.mean(summand**2))
    return sigma2, math.sqrt(lam / n)


# ---------------------------------------------------------------------------
# sandwich standard errors


def sandwich_se(kind, mean: MeanSpec, sigma2: float, series, operator: OperatorSpec) -> np.ndarray:
    """Approximate standard errors for theta_hat.

    For the quasi-likelihood estimators this is the G^-1 G1 G^-1 sandwich
    with the estimator-specific weights; for "2w" it is J^-1 with
    J = E[grad grad' / v_t].  All expectations are sample averages with
    plug-in estimates; conditional variances are floored at WEIGHT_FLOOR.
    """
    k = _as_kind(kind)
    if k.kind == "1w":
        raise DomainError("no published covariance for the stage-1 estimator")
    x = _check_series(series)
    m = conditional_mean_path(mean, x)
    G = mean_gradient_path(mean, x)
    v = np.maximum(conditional_variance(operator, m, sigma2), WEIGHT_FLOOR)
    n = x.size
    if k.kind == "2w":
        J = (G / v[:, None]).T @ G / n
        try:
            cov = np.linalg.inv(J) / n
        except np.linalg.LinAlgError as exc:
            raise EstimationError(f"information matrix J is singular: {exc}") from exc
    else:
        if k.kind == "pq":
            w_g = 1.0 / m
            w_g1 = v / m**2
        elif k.kind == "nq":
            r = k.nq_r
            w_g = 1.0 / (m * (r + m))
            w_g1 = v / (m * (r + m)) ** 2
        else:
            w_g = 1.0 / m**2
            w_g1 = v / m**4
        g_mat = (G * w_g[:, None]).T @ G / n
        g1_mat = (G * w_g1[:, None]).T @ G / n
        try:
            half = np.linalg.solve(g_mat, g1_mat)
            cov = np.linalg.solve(g_mat, half.T).T / n
        except np.linalg.LinAlgError as exc:
            raise EstimationError(f"matrix G is singular: {exc}") from exc
    diag = np.diag(cov)
    if not np.all(np.isfinite(diag)) or (diag < 0).any():
        raise EstimationError("sandwich covariance has invalid diagonal entries")
    return np.sqrt(diag)


# ---------------------------------------------------------------------------
# weighted least squares


def fit_wlse(
    series,
    order: tuple[int, int] = (1, 1),
    operator: OperatorSpec = POISSON_OP,
    init: MeanSpec | None = None,
    weight_mean: MeanSpec | None = None,
    weight_sigma2: float | None = None,
    stages: int = 2,
    options: FitOptions | None = None,
    keep_stage1: bool = False,
) -> FitResult:
    """Weighted least squares with estimated conditional-variance weights.

    Stage 1 minimizes sum_t (X_t - M_t(theta))^2 / v_t at a frozen weighting
    point (default: method-of-moments estimates); stage 2 re-weights at the
    stage-1 estimate and its innovation variance.  Standard errors come from
    the inverse weighted information J.
    """
    if stages not in (1, 2):
        raise DomainError("stages must be 1 or 2")
    p, q = order
    x = _check_series(series, min_len=10 + 5 * (p + q))
    opts = options or FitOptions()
    warn_list: list[str] = []
    n = x.size
    xbar = float(x.mean())
    init_mean = init if init is not None else _default_init(x, p, q, warn_list)
    if weight_mean is None:
        weight_mean = init_mean
    if weight_sigma2 is None:
        weight_sigma2, _ = estimate_sigma2(operator, x, conditional_mean_path(weight_mean, x))
        if weight_sigma2 < 0.0:
            warn_list.append(
                f"weighting-point variance estimate is negative ({weight_sigma2:.4g})"
            )

    def make_neg_fun(w):
        def neg_fun(u, tr):
            theta = tr.to_theta(u)
            mean = MeanSpec.from_theta(theta, p, q)
            m = _mean_path(mean, x, xbar)
            resid = x - m
            val = float(np.sum(w * resid * resid)) / n
            G = _grad_path(mean, x, m, xbar)
            g_theta = (-2.0 / n) * (G * (w * resid)[:, None]).sum(axis=0)
            return val, tr.grad_to_u(theta, g_theta)

        return neg_fun

    v1 = np.maximum(
        conditional_variance(operator, conditional_mean_path(weight_mean, x), weight_sigma2),
        WEIGHT_FLOOR,
    )
    theta1, conv1, nit1, _ = _run_optimizer(make_neg_fun(1.0 / v1), init_mean, p, q, opts)
    mean1 = MeanSpec.from_theta(theta1, p, q)
    fitted1 = conditional_mean_path(mean1, x)
    sigma2_1, _ = estimate_sigma2(operator, x, fitted1)
    if sigma2_1 < 0.0:
        warn_list.append(f"stage-1 innovation variance estimate is negative ({sigma2_1:.4g})")

    stage1_result = FitResult(
        method="1w",
        nq_r=1.0,
        order=(p, q),
        operator=operator,
        mean_hat=mean1,
        theta_hat=theta1,
        sigma2_hat=sigma2_1,
        ase=None,
        fitted_means=fitted1,
        objective_value=float(np.sum((x - fitted1) ** 2 / v1)),
        converged=conv1,
        iterations=nit1,
        init_used=init_mean,
        warnings=list(warn_list),
    )
    if stages == 1:
        return stage1_result

    v2 = np.maximum(conditional_variance(operator, fitted1, sigma2_1), WEIGHT_FLOOR)
    theta2, conv2, nit2, _ = _run_optimizer(make_neg_fun(1.0 / v2), mean1, p, q, opts)
    mean2 = MeanSpec.from_theta(theta2, p, q)
    fitted2 = conditional_mean_path(mean2, x)
    sigma2_2, lam_ase2 = estimate_sigma2(operator, x, fitted2)
    if sigma2_2 < 0.0:
        warn_list.append(f"innovation variance estimate is negative ({sigma2_2:.4g})")
    converged = bool(conv1 and conv2)
    if not converged:
        warn_list.append("optimizer did not converge within tolerances")
    ase_theta = sandwich_se(W2, mean2, sigma2_2, x, operator)
    return FitResult(
        method="2w",
        nq_r=1.0,
        order=(p, q),
        operator=operator,
        mean_hat=mean2,
        theta_hat=theta2,
        sigma2_hat=sigma2_2,
        ase=np.concatenate([ase_theta, [lam_ase2]]),
        fitted_means=fitted2,
        objective_value=float(np.sum((x - fitted2) ** 2 / v2)),
        converged=converged,
        iterations=nit1 + nit2,
        init_used=init_mean,
        warnings=warn_list,
        stage1=stage1_result if keep_stage1 else None,
    )


def fit(
    kind,
    series,
    order: tuple[int, int] = (1, 1),
    operator: OperatorSpec = POISSON_OP,
    init: MeanSpec | None = None,
    options: FitOptions | None = None,
) -> FitResult:
    """Dispatch to :func:`fit_qmle` or :func:`fit_wlse` by estimator kind."""
    k = _as_kind(kind)
    if k.kind in _QMLE_KINDS:
        return fit_qmle(k, series, order=order, operator=operator, init=init, options=options)
    return fit_wlse(
        series,
        order=order,
        operator=operator,
        init=init,
        stages=1 if k.kind == "1w" else 2,
        options=options,
    )
