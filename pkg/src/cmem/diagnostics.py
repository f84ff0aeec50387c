"""Residual diagnostics and adequacy checks for fitted count models.

Pearson residuals use the full conditional variance nu(M) + sigma2 * M^2;
scaled residuals X/M separate the innovation variance from the operator
part.  The module also predicts the scaled-residual variance implied by a
model, screens for negative-binomial-style overdispersion, and evaluates
one-step-ahead performance on a holdout stretch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError
from .estimation import FitResult, conditional_variance, estimate_sigma2, _check_series
from .model import (
    EstimationWarning,
    ModelSpec,
    MomentSummary,
    conditional_mean_path,
    interval_hi,
    moment_estimate_11,
    moment_summary,
    sample_acf,
)
from .operators import OperatorSpec


def pearson_residuals(series, fitted_means, op: OperatorSpec, sigma2: float) -> np.ndarray:
    """(X_t - M_t) / sqrt(nu(M_t) + sigma2 * M_t^2)."""
    x = _check_series(series)
    m = np.asarray(fitted_means, dtype=float)
    if m.shape != x.shape:
        raise DomainError("series and fitted_means must have the same length")
    v = conditional_variance(op, m, sigma2)
    if not np.all(v > 0.0):
        bad = int(np.argmax(~(v > 0.0)))
        raise NumericalError(f"non-positive conditional variance at index {bad}")
    return (x - m) / np.sqrt(v)


def mspr(series, fitted_means, op: OperatorSpec, sigma2: float) -> float:
    """Mean of squared Pearson residuals; near 1 under a correct model."""
    r = pearson_residuals(series, fitted_means, op, sigma2)
    return float(np.mean(r * r))


def scaled_residuals(series, fitted_means) -> np.ndarray:
    x = _check_series(series)
    m = np.asarray(fitted_means, dtype=float)
    if (m <= 0.0).any():
        raise DomainError("fitted means must be positive")
    return x / m


def scaled_residual_stats(series, fitted_means) -> tuple[float, float]:
    """(mean, sample variance) of the scaled residuals X_t / M_t."""
    s = scaled_residuals(series, fitted_means)
    return float(s.mean()), float(s.var(ddof=1))


def mean_absolute_residual(series, fitted_means) -> float:
    x = _check_series(series)
    m = np.asarray(fitted_means, dtype=float)
    if m.shape != x.shape:
        raise DomainError("series and fitted_means must have the same length")
    return float(np.mean(np.abs(x - m)))


def predicted_scaled_variance(
    op: OperatorSpec, sigma2: float, summary: MomentSummary
) -> float | tuple[float, float]:
    """Model-implied variance of X_t / M_t: sigma2 + E[nu(M_t) / M_t^2].

    The expectation is approximated by a second-order expansion around the
    marginal mean using the marginal variance of the counts.  For the
    binomial operator only the bound nu <= 1/4 is available, so an interval
    (sigma2, sigma2 + bound) is returned, the bound evaluated at the upper
    variance endpoint.
    """
    mu = summary.mu
    if op.kind == "binomial":
        v_hi = interval_hi(summary.var)
        bound = 0.25 * (1.0 / mu**2 + 3.0 * v_hi / mu**4)
        return (float(sigma2), float(sigma2 + bound))
    v = interval_hi(summary.var)
    base = 1.0 / mu + v / mu**3
    if op.kind == "poisson":
        return float(sigma2 + base)
    if op.kind == "nb":
        return float(sigma2 + 1.0 + base)
    return float(sigma2 + op.zip_kappa * base)


def nb_suitability_screen(series) -> tuple[float, bool]:
    """Scaled-residual variance under a method-of-moments fit and whether it
    exceeds 1 (the signature of an nb-type operator with extra dispersion)."""
    x = _check_series(series, min_len=5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        mean = moment_estimate_11(x)
    m = conditional_mean_path(mean, x)
    _, vsr = scaled_residual_stats(x, m)
    return vsr, bool(vsr > 1.0)


@dataclass
class DiagnosticsReport:
    n: int
    mar: float
    msr: float
    vsr: float
    mspr: float
    pearson: np.ndarray
    scaled: np.ndarray
    residual_acf: np.ndarray
    predicted_vsr: float | tuple[float, float] | None = None


def residual_report(
    series,
    fitted_means,
    op: OperatorSpec,
    sigma2: float,
    acf_lags: int = 10,
    predicted_vsr: float | tuple[float, float] | None = None,
) -> DiagnosticsReport:
    """Bundle the residual diagnostics for one fitted mean path."""
    x = _check_series(series)
    r = pearson_residuals(x, fitted_means, op, sigma2)
    s = scaled_residuals(x, fitted_means)
    msr, vsr = scaled_residual_stats(x, fitted_means)
    lags = min(acf_lags, x.size - 1)
    return DiagnosticsReport(
        n=x.size,
        mar=mean_absolute_residual(x, fitted_means),
        msr=msr,
        vsr=vsr,
        mspr=float(np.mean(r * r)),
        pearson=r,
        scaled=s,
        residual_acf=sample_acf(r, lags) if lags >= 1 else np.empty(0),
        predicted_vsr=predicted_vsr,
    )


@dataclass(frozen=True)
class FilterState:
    """Startup state for continuing the mean recursion past a sample:
    the last p observations and last q fitted means, most recent first."""

    x_tail: tuple[float, ...]
    m_tail: tuple[float, ...]


def filter_state(training_series, fit: FitResult) -> FilterState:
    """State at the end of the training sample of a fit."""
    x = _check_series(training_series)
    p, q = fit.order
    if x.size < p or fit.fitted_means.size < q:
        raise DomainError("training sample shorter than the model order")
    x_tail = tuple(float(v) for v in x[::-1][:p])
    m_tail = tuple(float(v) for v in fit.fitted_means[::-1][:q])
    return FilterState(x_tail=x_tail, m_tail=m_tail)


def holdout_evaluate(
    fit: FitResult, state: FilterState, holdout, op: OperatorSpec | None = None
) -> DiagnosticsReport:
    """One-step-ahead diagnostics on a holdout continuation.

    The mean recursion continues from ``state`` with the fitted parameters;
    each holdout observation then enters the recursion for the next step.
    """
    x = _check_series(holdout, min_len=2)
    op = op if op is not None else fit.operator
    p, q = fit.order
    if len(state.x_tail) != p or len(state.m_tail) != q:
        raise DomainError("filter state does not match the model order")
    m = conditional_mean_path(
        fit.mean_hat,
        x,
        x_init=np.asarray(state.x_tail) if p else None,
        m_init=np.asarray(state.m_tail) if q else None,
    )
    return residual_report(x, m, op, fit.sigma2_hat)


@dataclass
class ModelSampleComparison:
    """Sample moments of a series next to the stationary moments of a model."""

    n: int
    sample_mean: float
    sample_var: float
    sample_rho: np.ndarray
    model: MomentSummary


def model_vs_sample_report(series, model: ModelSpec, max_lag: int = 5) -> ModelSampleComparison:
    x = _check_series(series, min_len=max_lag + 2)
    summary = moment_summary(model, max_lag=max_lag)
    return ModelSampleComparison(
        n=x.size,
        sample_mean=float(x.mean()),
        sample_var=float(x.var(ddof=1)),
        sample_rho=sample_acf(x, max_lag),
        model=summary,
    )
