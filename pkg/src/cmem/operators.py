"""Integer multiplicative operators and unit-mean innovation distributions.

An operator ``alpha (*) eps`` maps a positive real ``alpha`` and a count
``eps`` to a random count whose conditional mean is ``alpha * eps``.  The
conditional variance is ``nu(alpha) * eps`` with ``nu`` depending on the
operator kind.  Innovations are i.i.d. counts with mean one and variance
``sigma2``; together they drive the multiplicative count models in
:mod:`cmem.model`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError

# Truncation policy for infinite-support pmfs: accumulate until the leftover
# tail mass is below TAIL_MASS, never enumerating more than MAX_TERMS points.
TAIL_MASS = 1e-12
MAX_TERMS = 10**6

# Conditional ZIP intensities above this are refused rather than enumerated.
ZIP_LAMBDA_CAP = 1e9

_OPERATOR_KINDS = ("poisson", "nb", "binomial", "zip")
_INNOVATION_KINDS = ("degenerate", "poisson", "three_point", "zip", "empirical")


@dataclass(frozen=True)
class OperatorSpec:
    """Which multiplicative operator to use.

    kind
        "poisson"   compounding with Poisson counting variables,
        "nb"        compounding with geometric counting variables,
        "binomial"  floor(alpha)*eps plus Binomial(eps, frac(alpha)),
        "zip"       conditional zero-inflated Poisson with dispersion zip_kappa.
    zip_kappa
        Conditional variance-to-mean ratio for kind "zip"; must exceed 1.
    """

    kind: str
    zip_kappa: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _OPERATOR_KINDS:
            raise DomainError(f"unknown operator kind {self.kind!r}")
        if self.kind == "zip":
            if self.zip_kappa is None or not self.zip_kappa > 1.0:
                raise DomainError("zip operator needs zip_kappa > 1")
        elif self.zip_kappa is not None:
            raise DomainError(f"zip_kappa is only valid for kind 'zip', not {self.kind!r}")


POISSON_OP = OperatorSpec("poisson")
NB_OP = OperatorSpec("nb")
BINOMIAL_OP = OperatorSpec("binomial")


def zip_operator(kappa: float) -> OperatorSpec:
    return OperatorSpec("zip", zip_kappa=float(kappa))


@dataclass(frozen=True)
class InnovationSpec:
    """A count distribution with mean exactly one.

    kind
        "degenerate"   point mass at 1 (sigma2 = 0),
        "poisson"      Poisson(1) (sigma2 = 1),
        "three_point"  support {0,1,2} with P(0)=P(2)=three_point_p2,
        "zip"          zero-inflated Poisson(1/(1-omega), omega),
        "empirical"    explicit pmf over {0,1,...,len(pmf)-1}.
    """

    kind: str
    three_point_p2: float | None = None
    zip_omega: float | None = None
    pmf: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in _INNOVATION_KINDS:
            raise DomainError(f"unknown innovation kind {self.kind!r}")
        if self.kind == "three_point":
            p2 = self.three_point_p2
            if p2 is None or not 0.0 < p2 < 0.5:
                raise DomainError("three_point needs 0 < three_point_p2 < 0.5")
        if self.kind == "zip":
            om = self.zip_omega
            if om is None or not 0.0 < om < 1.0:
                raise DomainError("zip innovation needs 0 < zip_omega < 1")
        if self.kind == "empirical":
            if self.pmf is None or len(self.pmf) < 2:
                raise DomainError("empirical innovation needs a pmf of length >= 2")
            p = np.asarray(self.pmf, dtype=float)
            if (p < 0).any():
                raise DomainError("empirical pmf has negative entries")
            if abs(p.sum() - 1.0) > 1e-12:
                raise DomainError("empirical pmf must sum to 1 within 1e-12")
            mean = float(np.arange(len(p)) @ p)
            if abs(mean - 1.0) > 1e-12:
                raise DomainError("empirical pmf must have mean 1 within 1e-12")
            # mean 1 forces p0 = sum_{l>=2} (l-1) p_l; strictness of
            # sum_{l>=2} l p_l < 1 is equivalent to p1 > 0
            if not p[1] > 0.0:
                raise DomainError("empirical pmf needs P(1) > 0")


DEGENERATE_ONE = InnovationSpec("degenerate")
POISSON_UNIT = InnovationSpec("poisson")


def three_point(p2: float) -> InnovationSpec:
    return InnovationSpec("three_point", three_point_p2=float(p2))


def three_point_from_sigma2(sigma2: float) -> InnovationSpec:
    """Three-point innovation with variance ``sigma2``, for sigma2 in (0, 1)."""
    if not 0.0 < sigma2 < 1.0:
        raise DomainError("three-point construction needs 0 < sigma2 < 1")
    return three_point(sigma2 / 2.0)


def zip_unit(omega: float) -> InnovationSpec:
    return InnovationSpec("zip", zip_omega=float(omega))


def empirical(pmf) -> InnovationSpec:
    return InnovationSpec("empirical", pmf=tuple(float(p) for p in pmf))


def innovation_with_variance(sigma2: float) -> InnovationSpec:
    """Some unit-mean innovation whose variance equals ``sigma2``.

    Useful where only the variance enters (marginal moments): degenerate at
    0, three-point on (0, 1), Poisson at 1, zero-inflated Poisson above 1.
    """
    if sigma2 < 0.0:
        raise DomainError("sigma2 must be non-negative")
    if sigma2 == 0.0:
        return DEGENERATE_ONE
    if sigma2 < 1.0:
        return three_point_from_sigma2(sigma2)
    if sigma2 == 1.0:
        return POISSON_UNIT
    return zip_unit(1.0 - 1.0 / sigma2)


def innovation_variance(innov: InnovationSpec) -> float:
    """Variance sigma2 of a unit-mean innovation."""
    if innov.kind == "degenerate":
        return 0.0
    if innov.kind == "poisson":
        return 1.0
    if innov.kind == "three_point":
        return 2.0 * innov.three_point_p2
    if innov.kind == "zip":
        # ZIP(lambda, omega) with mean 1 has lambda = 1/(1-omega) and
        # variance mean*(lambda - mean + 1) = lambda
        return 1.0 / (1.0 - innov.zip_omega)
    p = np.asarray(innov.pmf, dtype=float)
    ls = np.arange(len(p))
    return float(ls**2 @ p - 1.0)


def innovation_pgf(innov: InnovationSpec, u: float) -> float:
    """Probability generating function E[u^eps]."""
    if innov.kind == "degenerate":
        return float(u)
    if innov.kind == "poisson":
        return math.exp(u - 1.0)
    if innov.kind == "three_point":
        p2 = innov.three_point_p2
        return p2 + (1.0 - 2.0 * p2) * u + p2 * u * u
    if innov.kind == "zip":
        om = innov.zip_omega
        return om + (1.0 - om) * math.exp((u - 1.0) / (1.0 - om))
    p = np.asarray(innov.pmf, dtype=float)
    return float(np.polyval(p[::-1], u))


def innovation_support(innov: InnovationSpec, tail: float = TAIL_MASS):
    """Support points and pmf values covering all but ``tail`` mass.

    Returns (values, pmf) as integer and float arrays.
    """
    if innov.kind == "degenerate":
        return np.array([1]), np.array([1.0])
    if innov.kind == "three_point":
        p2 = innov.three_point_p2
        return np.arange(3), np.array([p2, 1.0 - 2.0 * p2, p2])
    if innov.kind == "empirical":
        p = np.asarray(innov.pmf, dtype=float)
        return np.arange(len(p)), p
    if innov.kind == "poisson":
        kmax = int(stats.poisson.isf(tail / 10.0, 1.0)) + 2
        ks = np.arange(kmax + 1)
        return ks, stats.poisson.pmf(ks, 1.0)
    # zip: omega-inflated Poisson(1/(1-omega))
    om = innov.zip_omega
    lam = 1.0 / (1.0 - om)
    kmax = int(stats.poisson.isf(tail / 10.0, lam)) + 2
    ks = np.arange(kmax + 1)
    p = (1.0 - om) * stats.poisson.pmf(ks, lam)
    p[0] += om
    return ks, p


def sample_innovation(innov: InnovationSpec, rng: np.random.Generator, size=None):
    """Draw innovations; returns an int scalar for size=None, else an array."""
    if innov.kind == "degenerate":
        return 1 if size is None else np.ones(size, dtype=np.int64)
    if innov.kind == "poisson":
        return rng.poisson(1.0, size=size)
    if innov.kind == "three_point":
        p2 = innov.three_point_p2
        return rng.choice(3, size=size, p=[p2, 1.0 - 2.0 * p2, p2])
    if innov.kind == "zip":
        om = innov.zip_omega
        lam = 1.0 / (1.0 - om)
        if size is None:
            return 0 if rng.random() < om else int(rng.poisson(lam))
        out = rng.poisson(lam, size=size)
        out[rng.random(size=size) < om] = 0
        return out
    p = np.asarray(innov.pmf, dtype=float)
    return rng.choice(len(p), size=size, p=p / p.sum())


def _check_alpha_eps(alpha: float, eps: int) -> int:
    if not alpha > 0.0 or not np.isfinite(alpha):
        raise DomainError(f"operator needs alpha > 0, got {alpha}")
    eps_i = int(eps)
    if eps_i != eps or eps_i < 0:
        raise DomainError(f"operator needs a count eps >= 0, got {eps}")
    return eps_i


def nu(op: OperatorSpec, alpha: float) -> float:
    """Variance factor: V[alpha (*) eps | eps] = nu(alpha) * eps."""
    if not alpha > 0.0 or not np.isfinite(alpha):
        raise DomainError(f"nu needs alpha > 0, got {alpha}")
    if op.kind == "poisson":
        return float(alpha)
    if op.kind == "nb":
        return float(alpha * (1.0 + alpha))
    if op.kind == "binomial":
        frac = alpha - math.floor(alpha)
        return frac * (1.0 - frac)
    return float(op.zip_kappa * alpha)


def _zip_conditional(op: OperatorSpec, alpha: float, eps: int) -> tuple[float, float]:
    """(lambda, omega) of the conditional ZIP law for eps >= 1."""
    lam = alpha * eps + op.zip_kappa - 1.0
    if lam > ZIP_LAMBDA_CAP:
        raise DomainError(f"conditional zip intensity {lam:.3g} exceeds cap {ZIP_LAMBDA_CAP:.0e}")
    om = (op.zip_kappa - 1.0) / lam
    return lam, om


def sample_operator(op: OperatorSpec, alpha: float, eps: int, rng: np.random.Generator) -> int:
    """Draw one realization of alpha (*) eps."""
    eps = _check_alpha_eps(alpha, eps)
    if eps == 0:
        return 0
    if op.kind == "poisson":
        return int(rng.poisson(alpha * eps))
    if op.kind == "nb":
        return int(rng.negative_binomial(eps, 1.0 / (1.0 + alpha)))
    if op.kind == "binomial":
        fl = math.floor(alpha)
        frac = alpha - fl
        extra = int(rng.binomial(eps, frac)) if frac > 0.0 else 0
        return fl * eps + extra
    lam, om = _zip_conditional(op, alpha, eps)
    if rng.random() < om:
        return 0
    return int(rng.poisson(lam))


def conditional_pmf(op: OperatorSpec, alpha: float, eps: int, k):
    """P(alpha (*) eps = k | eps), vectorized over ``k``."""
    eps = _check_alpha_eps(alpha, eps)
    k = np.asarray(k)
    if eps == 0:
        out = np.where(k == 0, 1.0, 0.0)
        return out if out.ndim else float(out)
    if op.kind == "poisson":
        out = stats.poisson.pmf(k, alpha * eps)
    elif op.kind == "nb":
        out = stats.nbinom.pmf(k, eps, 1.0 / (1.0 + alpha))
    elif op.kind == "binomial":
        fl = math.floor(alpha)
        out = stats.binom.pmf(k - fl * eps, eps, alpha - fl)
    else:
        lam, om = _zip_conditional(op, alpha, eps)
        out = (1.0 - om) * stats.poisson.pmf(k, lam) + om * (k == 0)
    return out if np.ndim(out) else float(out)


def conditional_support(op: OperatorSpec, alpha: float, eps: int, tail: float = TAIL_MASS):
    """Integer grid supporting all but ``tail`` of the conditional law."""
    eps = _check_alpha_eps(alpha, eps)
    if eps == 0:
        return np.array([0])
    if op.kind == "binomial":
        fl = math.floor(alpha)
        return np.arange(fl * eps, (fl + 1) * eps + 1)
    if op.kind == "poisson":
        kmax = stats.poisson.isf(tail / 10.0, alpha * eps)
    elif op.kind == "nb":
        kmax = stats.nbinom.isf(tail / 10.0, eps, 1.0 / (1.0 + alpha))
    else:
        lam, _ = _zip_conditional(op, alpha, eps)
        kmax = stats.poisson.isf(tail / 10.0, lam)
    kmax = int(min(kmax + 2, MAX_TERMS))
    return np.arange(kmax + 1)


def operator_pgf(op: OperatorSpec, alpha: float, innov: InnovationSpec, u: float) -> float:
    """pgf of alpha (*) eps with eps drawn from ``innov``, evaluated at u."""
    if not alpha > 0.0 or not np.isfinite(alpha):
        raise DomainError(f"operator_pgf needs alpha > 0, got {alpha}")
    if op.kind == "poisson":
        return innovation_pgf(innov, math.exp(alpha * (u - 1.0)))
    if op.kind == "nb":
        # geometric counting pgf: 1 / (1 + alpha - alpha u)
        return innovation_pgf(innov, 1.0 / (1.0 + alpha - alpha * u))
    if op.kind == "binomial":
        fl = math.floor(alpha)
        frac = alpha - fl
        return innovation_pgf(innov, u**fl * (1.0 - frac + frac * u))
    # zip has no compounding representation; mix conditional pgfs over eps
    ls, p = innovation_support(innov)
    total = 0.0
    for l, pl in zip(ls, p):
        if l == 0:
            total += pl
            continue
        lam, om = _zip_conditional(op, alpha, int(l))
        total += pl * (om + (1.0 - om) * math.exp(lam * (u - 1.0)))
    return total
