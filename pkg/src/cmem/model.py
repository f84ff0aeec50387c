"""Multiplicative count models with a feedback conditional mean.

The observation at time t is ``X_t = M_t (*) eps_t`` where ``(*)`` is one of
the operators from :mod:`cmem.operators`, ``eps_t`` are i.i.d. unit-mean
innovations and the conditional mean follows the linear feedback recursion

    M_t = a0 + sum_i a_i X_{t-i} + sum_j b_j M_{t-j},

optionally passed through a softplus response for simulation experiments.
This module provides the recursion, simulation, marginal moments and a
method-of-moments estimator for the order-(1,1) case.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter, lfiltic

from .errors import DomainError, NumericalError, StationarityError
from .operators import (
    InnovationSpec,
    OperatorSpec,
    innovation_variance,
    nu,
    sample_innovation,
)


class EstimationWarning(UserWarning):
    """Non-fatal problems during estimation (degenerate inputs, fallbacks)."""


@dataclass(frozen=True)
class MeanSpec:
    """Parameters of the conditional-mean recursion.

    ``a`` are the feedback weights on lagged observations, ``b`` those on
    lagged conditional means.  ``softplus_c`` switches the response from
    linear to ``c * log(1 + exp(z / c))``; estimation supports only the
    linear response.
    """

    a0: float
    a: tuple[float, ...] = ()
    b: tuple[float, ...] = ()
    softplus_c: float | None = None

    def __post_init__(self) -> None:
        if not self.a0 > 0.0 or not np.isfinite(self.a0):
            raise DomainError(f"a0 must be positive, got {self.a0}")
        for name, coeffs in (("a", self.a), ("b", self.b)):
            for c in coeffs:
                if c < 0.0 or not np.isfinite(c):
                    raise DomainError(f"{name} coefficients must be >= 0, got {c}")
        if self.softplus_c is not None and not self.softplus_c > 0.0:
            raise DomainError("softplus_c must be positive")

    @property
    def p(self) -> int:
        return len(self.a)

    @property
    def q(self) -> int:
        return len(self.b)

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.a0, *self.a, *self.b], dtype=float)

    @classmethod
    def from_theta(cls, theta, p: int, q: int, softplus_c: float | None = None) -> "MeanSpec":
        theta = np.asarray(theta, dtype=float)
        if theta.size != 1 + p + q:
            raise DomainError(f"theta has length {theta.size}, expected {1 + p + q}")
        return cls(
            a0=float(theta[0]),
            a=tuple(float(v) for v in theta[1 : 1 + p]),
            b=tuple(float(v) for v in theta[1 + p :]),
            softplus_c=softplus_c,
        )


@dataclass(frozen=True)
class ModelSpec:
    """Operator, innovation law and conditional-mean recursion of one model."""

    operator: OperatorSpec
    innovation: InnovationSpec
    mean: MeanSpec

    @property
    def sigma2(self) -> float:
        return innovation_variance(self.innovation)


def check_first_order_stationarity(mean: MeanSpec) -> bool:
    """True when sum(a) + sum(b) < 1."""
    return sum(mean.a) + sum(mean.b) < 1.0


def variance_slope_v1(op: OperatorSpec, sigma2: float) -> float:
    """Slope v1 of the conditional variance-to-mean ratio v0 + v1 * M.

    Defined for operators whose nu is linear in alpha; the binomial operator
    has no such representation and is refused.
    """
    if op.kind == "binomial":
        raise DomainError("binomial operator has no affine variance-to-mean relation")
    if op.kind == "poisson":
        return float(sigma2)
    if op.kind == "nb":
        return 1.0 + float(sigma2)
    return float(sigma2)  # zip: V/M = kappa + sigma2 * M


def check_second_order_stationarity_11(mean: MeanSpec, v1: float) -> bool:
    """Second-order stationarity criterion for order (1,1):
    (a1 + b1)^2 + v1 * a1^2 < 1."""
    if mean.p > 1 or mean.q > 1:
        raise DomainError("criterion is for order (1,1); higher orders are not covered")
    a1 = mean.a[0] if mean.p else 0.0
    b1 = mean.b[0] if mean.q else 0.0
    return (a1 + b1) ** 2 + v1 * a1 * a1 < 1.0


def unconditional_mean(mean: MeanSpec) -> float:
    """Stationary mean a0 / (1 - sum(a) - sum(b)) of the linear recursion.

    For a softplus response this is the mean of the underlying linear
    skeleton, used as the startup value in simulation.
    """
    if not check_first_order_stationarity(mean):
        raise StationarityError(
            f"sum(a) + sum(b) = {sum(mean.a) + sum(mean.b):.6g} >= 1; no stationary mean"
        )
    return mean.a0 / (1.0 - sum(mean.a) - sum(mean.b))


def _softplus(z: np.ndarray | float, c: float):
    return c * np.logaddexp(0.0, np.asarray(z, dtype=float) / c)


def _init_vector(init, length: int, default: float, name: str) -> np.ndarray:
    if length == 0:
        return np.empty(0)
    if init is None:
        return np.full(length, default)
    arr = np.atleast_1d(np.asarray(init, dtype=float))
    if arr.size == 1:
        return np.full(length, float(arr[0]))
    if arr.size != length:
        raise DomainError(f"{name} needs length {length} (most recent first), got {arr.size}")
    return arr.astype(float)


def conditional_mean_path(
    mean: MeanSpec,
    series,
    x_init=None,
    m_init=None,
) -> np.ndarray:
    """Mean recursion evaluated along an observed series.

    Parameters
    ----------
    series : array_like of counts, the observations X_1..X_n.
    x_init, m_init : optional startup values for the pre-sample lags,
        most recent first (index 0 is the value used for lag 1 at t=1).
        Scalars are broadcast; default is the sample mean of ``series``.

    Returns
    -------
    ndarray with the means M_1..M_n.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise DomainError("series must be one-dimensional")
    n = x.size
    p, q = mean.p, mean.q
    if n == 0:
        return np.empty(0)
    default = float(x.mean())
    if default <= 0.0 and (x_init is None or m_init is None):
        # an all-zero series gives no usable startup level; fall back to a0
        default = mean.a0
    xi = _init_vector(x_init, p, default, "x_init")
    mi = _init_vector(m_init, q, default, "m_init")
    if q and (mi <= 0.0).any():
        raise DomainError("m_init must be positive")

    # forcing term c_t = a0 + sum_i a_i X_{t-i}
    c = np.full(n, mean.a0)
    if p:
        xs = np.concatenate([xi[::-1], x])
        for i in range(1, p + 1):
            c += mean.a[i - 1] * xs[p - i : p - i + n]

    if mean.softplus_c is not None:
        cval = mean.softplus_c
        m = np.empty(n)
        hist = list(mi)  # most recent first
        for t in range(n):
            z = c[t]
            for j in range(q):
                z += mean.b[j] * hist[j]
            m[t] = _softplus(z, cval)
            if q:
                hist.insert(0, m[t])
                hist.pop()
        return m

    if q == 0:
        m = c
    else:
        a_poly = np.concatenate([[1.0], -np.asarray(mean.b)])
        zi = lfiltic([1.0], a_poly, mi)
        m, _ = lfilter([1.0], a_poly, c, zi=zi)
    if not np.all(m > 0.0):
        bad = int(np.argmax(~(m > 0.0)))
        raise NumericalError(f"non-positive conditional mean at index {bad}")
    return m


def simulate(
    model: ModelSpec,
    n: int,
    rng: np.random.Generator,
    burn_in: int = 500,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n`` observations after discarding ``burn_in`` steps.

    Returns (x, m): the counts and their conditional means.  The recursion
    starts at the stationary mean of the linear skeleton.
    """
    if n < 0 or burn_in < 0:
        raise DomainError("n and burn_in must be non-negative")
    mean, op = model.mean, model.operator
    p, q = mean.p, mean.q
    mu0 = unconditional_mean(mean)
    total = n + burn_in
    eps = np.atleast_1d(np.asarray(sample_innovation(model.innovation, rng, size=total)))

    a = np.asarray(mean.a)
    b = np.asarray(mean.b)
    xs = np.empty(p + total)
    ms = np.empty(q + total)
    xs[:p] = mu0
    ms[:q] = mu0
    kind = op.kind
    kappa = op.zip_kappa
    soft_c = mean.softplus_c
    for t in range(total):
        z = mean.a0
        if p:
            z += float(a @ xs[t : t + p][::-1])
        if q:
            z += float(b @ ms[t : t + q][::-1])
        mt = float(_softplus(z, soft_c)) if soft_c is not None else z
        et = int(eps[t])
        if et == 0:
            xt = 0
        elif kind == "poisson":
            xt = int(rng.poisson(mt * et))
        elif kind == "nb":
            xt = int(rng.negative_binomial(et, 1.0 / (1.0 + mt)))
        elif kind == "binomial":
            fl = math.floor(mt)
            fr = mt - fl
            xt = fl * et + (int(rng.binomial(et, fr)) if fr > 0.0 else 0)
        else:
            lam = mt * et + kappa - 1.0
            xt = 0 if rng.random() < (kappa - 1.0) / lam else int(rng.poisson(lam))
        ms[q + t] = mt
        xs[p + t] = xt
    return xs[p + burn_in :].astype(np.int64), ms[q + burn_in :].copy()


# ---------------------------------------------------------------------------
# marginal moments


def interval_lo(x) -> float:
    return float(x[0]) if isinstance(x, tuple) else float(x)


def interval_hi(x) -> float:
    return float(x[1]) if isinstance(x, tuple) else float(x)


@dataclass(frozen=True)
class MomentSummary:
    """Stationary moments implied by a model.

    Quantities that depend on the binomial operator's bounded-but-unknown
    variance contribution are (lo, hi) tuples; everything else is a float or
    a plain array.
    """

    mu: float
    var: float | tuple[float, float]
    var_m: float | tuple[float, float]
    gamma_x: np.ndarray | tuple[np.ndarray, np.ndarray]
    gamma_m: np.ndarray | tuple[np.ndarray, np.ndarray]
    rho: np.ndarray | tuple[np.ndarray, np.ndarray]
    max_lag: int = field(default=5)


def acf_closed_form_11(a1: float, b1: float, max_lag: int) -> np.ndarray:
    """Autocorrelations rho(1..max_lag) for order (1,1):
    rho(k) = (a1+b1)^(k-1) * a1 (1 - b1 (a1+b1)) / (1 - (a1+b1)^2 + a1^2)."""
    s = a1 + b1
    d = 1.0 - s * s + a1 * a1
    rho1 = a1 * (1.0 - b1 * s) / d
    ks = np.arange(1, max_lag + 1)
    return rho1 * s ** (ks - 1.0)


def mean_variance_ratio_11(a1: float, b1: float) -> float:
    """V[M]/V[X] for order (1,1): a1^2 / (1 - (a1+b1)^2 + a1^2)."""
    s = a1 + b1
    return a1 * a1 / (1.0 - s * s + a1 * a1)


def _acov_solve(mean: MeanSpec, vm_coeff: float, vm_const: float, kk: int):
    """Solve the linear system for gamma_x(0..kk), gamma_m(0..kk).

    The variance identity enters as gamma_x(0) - vm_coeff * gamma_m(0) =
    vm_const; the remaining equations are the stationary autocovariance
    relations of the feedback recursion.
    """
    p, q = mean.p, mean.q
    a, b = mean.a, mean.b
    size = 2 * (kk + 1)
    A = np.zeros((size, size))
    rhs = np.zeros(size)

    def ix(k: int) -> int:
        return k

    def im(k: int) -> int:
        return kk + 1 + k

    A[0, ix(0)] = 1.0
    A[0, im(0)] = -vm_coeff
    rhs[0] = vm_const
    row = 1
    for k in range(1, kk + 1):
        A[row, ix(k)] += 1.0
        for i in range(1, p + 1):
            A[row, ix(abs(k - i))] -= a[i - 1]
        for j in range(1, min(k - 1, q) + 1):
            A[row, ix(k - j)] -= b[j - 1]
        for j in range(k, q + 1):
            A[row, im(j - k)] -= b[j - 1]
        row += 1
    for k in range(0, kk + 1):
        A[row, im(k)] += 1.0
        for i in range(1, min(k, p) + 1):
            A[row, im(abs(k - i))] -= a[i - 1]
        for i in range(k + 1, p + 1):
            A[row, ix(i - k)] -= a[i - 1]
        for j in range(1, q + 1):
            A[row, im(abs(k - j))] -= b[j - 1]
        row += 1
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise StationarityError(f"autocovariance system is singular: {exc}") from exc
    gx, gm = sol[: kk + 1], sol[kk + 1 :]
    if not np.all(np.isfinite(sol)) or gx[0] <= 0.0 or gm[0] < 0.0:
        raise StationarityError("autocovariance system has no admissible solution")
    return gx, gm


def moment_summary(model: ModelSpec, max_lag: int = 5) -> MomentSummary:
    """Stationary mean, variances and autocovariances up to ``max_lag``."""
    mean = model.mean
    if mean.softplus_c is not None:
        raise DomainError("moments are available for the linear response only")
    if max_lag < 1:
        raise DomainError("max_lag must be >= 1")
    op = model.operator
    sigma2 = model.sigma2
    mu = unconditional_mean(mean)
    p, q = mean.p, mean.q
    if p == q == 0:
        # constant conditional mean: the variance is exact for every kind
        v = nu(op, mu) + mu * mu * sigma2
        gx = np.zeros(max_lag + 1)
        gx[0] = v
        return MomentSummary(
            mu, float(v), 0.0, gx, np.zeros(max_lag + 1), np.zeros(max_lag), max_lag
        )

    if p == 1 and q <= 1 and op.kind != "binomial":
        v1 = variance_slope_v1(op, sigma2)
        b1 = mean.b[0] if q else 0.0
        spec11 = MeanSpec(mean.a0, mean.a, (b1,) if q else ())
        if not check_second_order_stationarity_11(spec11, v1):
            raise StationarityError(
                "second-order stationarity fails: (a1+b1)^2 + v1*a1^2 >= 1"
            )

    kk = max(max_lag, p, q)
    # variance identity V[X] = E[nu(M)] + mu^2 sigma2 + (sigma2 + 1) V[M],
    # expressed as gamma_x(0) - vm_coeff gamma_m(0) = vm_const per operator
    if op.kind == "poisson":
        cases = [(sigma2 + 1.0, mu + mu * mu * sigma2)]
    elif op.kind == "nb":
        cases = [(sigma2 + 2.0, mu + mu * mu * (sigma2 + 1.0))]
    elif op.kind == "zip":
        cases = [(sigma2 + 1.0, op.zip_kappa * mu + mu * mu * sigma2)]
    else:  # binomial: E[nu(M)] is only known to lie in [0, 1/4]
        cases = [
            (sigma2 + 1.0, 0.0 + mu * mu * sigma2),
            (sigma2 + 1.0, 0.25 + mu * mu * sigma2),
        ]

    solved = [_acov_solve(mean, coeff, const, kk) for coeff, const in cases]
    gx_lo, gm_lo = solved[0]
    gx_hi, gm_hi = solved[-1]

    if p == 1 and q == 1 and mean.softplus_c is None:
        # cross-check against the closed forms for order (1,1)
        a1, b1 = mean.a[0], mean.b[0]
        ratio = mean_variance_ratio_11(a1, b1)
        rho_cf = acf_closed_form_11(a1, b1, kk)
        for gx, gm in solved:
            if abs(gm[0] - ratio * gx[0]) > 1e-8 * max(1.0, gx[0]):
                raise NumericalError("autocovariance solver disagrees with closed form")
            if not np.allclose(gx[1:] / gx[0], rho_cf, rtol=1e-10, atol=1e-10):
                raise NumericalError("autocovariance solver disagrees with closed form")

    def collapse(lo, hi):
        if np.allclose(lo, hi, rtol=1e-9, atol=1e-12):
            return lo
        return (lo, hi)

    gx_out = collapse(gx_lo[: max_lag + 1], gx_hi[: max_lag + 1])
    gm_out = collapse(gm_lo[: max_lag + 1], gm_hi[: max_lag + 1])
    rho_out = collapse(gx_lo[1 : max_lag + 1] / gx_lo[0], gx_hi[1 : max_lag + 1] / gx_hi[0])
    var_out = collapse(gx_lo[0], gx_hi[0])
    var_m_out = collapse(gm_lo[0], gm_hi[0])
    if isinstance(var_out, np.ndarray):
        var_out = float(var_out)
    if isinstance(var_m_out, np.ndarray):
        var_m_out = float(var_m_out)
    if isinstance(var_out, tuple):
        var_out = (float(var_out[0]), float(var_out[1]))
    if isinstance(var_m_out, tuple):
        var_m_out = (float(var_m_out[0]), float(var_m_out[1]))
    return MomentSummary(float(mu), var_out, var_m_out, gx_out, gm_out, rho_out, max_lag)


# ---------------------------------------------------------------------------
# sample moments and the order-(1,1) moment estimator


def sample_acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations rho_hat(1..max_lag) with 1/n covariances."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n <= max_lag:
        raise DomainError(f"series of length {n} too short for lag {max_lag}")
    d = x - x.mean()
    denom = float(d @ d)
    if denom == 0.0:
        return np.full(max_lag, np.nan)
    return np.array([float(d[k:] @ d[:-k]) / denom for k in range(1, max_lag + 1)])


def moment_estimate_11(series) -> MeanSpec:
    """Method-of-moments estimate of (a0, a1, b1) from mean and ACF.

    Uses x_bar, rho_hat(1), rho_hat(2); solves the quadratic implied by the
    closed-form ACF and clamps the result into the stationary region.
    Degenerate sample ACFs fall back to a heuristic and emit an
    ``EstimationWarning``.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 5:
        raise DomainError("need at least 5 observations")
    xbar = float(x.mean())
    rho = sample_acf(x, 2)
    r1, r2 = float(rho[0]), float(rho[1])

    a1 = b1 = None
    if np.isfinite(r1) and np.isfinite(r2) and r1 > 0.0 and r2 > 0.0 and r2 < r1:
        s = r2 / r1
        # (r1 - s) a1^2 - (1 - s^2) a1 + r1 (1 - s^2) = 0
        qa, qb, qc = r1 - s, -(1.0 - s * s), r1 * (1.0 - s * s)
        if abs(qa) < 1e-12:
            roots = [r1]
        else:
            disc = qb * qb - 4.0 * qa * qc
            if disc >= 0.0:
                sq = math.sqrt(disc)
                roots = [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)]
            else:
                roots = []
        admissible = sorted(r for r in roots if 0.0 < r <= s + 1e-12)
        if admissible:
            a1 = min(admissible[0], s)
            b1 = s - a1
        else:
            warnings.warn(
                "moment quadratic has no admissible root; using heuristic split",
                EstimationWarning,
            )
            a1 = r1 * (1.0 - s)
            b1 = s - a1
    else:
        warnings.warn(
            "sample autocorrelations unusable for moment estimation; using heuristic",
            EstimationWarning,
        )
        if np.isfinite(r1) and r1 > 0.0:
            s = min(max(r1, 1e-4), 1.0 - 1e-3)
            a1 = r1 * (1.0 - s)
            b1 = s - a1
        else:
            a1, b1 = 1e-4, 0.0

    a1 = max(float(a1), 1e-4)
    b1 = max(float(b1), 0.0)
    total = a1 + b1
    cap = 1.0 - 1e-3
    if total > cap:
        a1 *= cap / total
        b1 *= cap / total
    a0 = max(xbar * (1.0 - a1 - b1), 1e-4)
    return MeanSpec(a0=a0, a=(a1,), b=(b1,))
