"""Residual diagnostics, holdout continuation and model-sample comparison."""

import math

import numpy as np
import pytest

from cmem import (
    BINOMIAL_OP,
    DEGENERATE_ONE,
    NB_OP,
    POISSON_OP,
    POISSON_UNIT,
    DomainError,
    FitResult,
    MeanSpec,
    ModelSpec,
    conditional_mean_path,
    filter_state,
    fit,
    holdout_evaluate,
    mean_absolute_residual,
    model_vs_sample_report,
    moment_summary,
    mspr,
    nb_suitability_screen,
    pearson_residuals,
    predicted_scaled_variance,
    residual_report,
    scaled_residual_stats,
    scaled_residuals,
    simulate,
    zip_operator,
)
from cmem.model import interval_hi

MEAN_11 = MeanSpec(2.8, (0.4,), (0.2,))
POI_MODEL = ModelSpec(POISSON_OP, POISSON_UNIT, MEAN_11)


def test_perfect_fit_statistics():
    x = np.array([3, 5, 2, 4])
    m = x.astype(float)
    assert pearson_residuals(x, m, POISSON_OP, 1.0) == pytest.approx(np.zeros(4))
    assert mspr(x, m, POISSON_OP, 1.0) == 0.0
    assert mean_absolute_residual(x, m) == 0.0
    assert scaled_residuals(x, m) == pytest.approx(np.ones(4))
    msr, vsr = scaled_residual_stats(x, m)
    assert msr == pytest.approx(1.0)
    assert vsr == pytest.approx(0.0)


def test_hand_computed_residual_statistics():
    x, m = np.array([3, 1]), np.array([2.0, 2.0])
    # poisson variance with sigma2 = 0.5: v = 2 + 0.5*4 = 4
    assert pearson_residuals(x, m, POISSON_OP, 0.5) == pytest.approx([0.5, -0.5])
    assert mspr(x, m, POISSON_OP, 0.5) == pytest.approx(0.25)
    x2, m2 = np.array([2, 4]), np.array([2.0, 2.0])
    msr, vsr = scaled_residual_stats(x2, m2)
    assert msr == pytest.approx(1.5)
    assert vsr == pytest.approx(0.5)  # ddof = 1
    assert mean_absolute_residual(x2, m2) == pytest.approx(1.0)


def test_pearson_residuals_require_positive_variance():
    with pytest.raises(DomainError):
        pearson_residuals([1, 2], [1.0, -1.0], POISSON_OP, 0.0)


def test_predicted_scaled_variance_values():
    s = moment_summary(POI_MODEL, max_lag=1)
    v = 56.0 / 0.6
    expect = 1.0 + 1.0 / 7.0 + v / 343.0
    assert predicted_scaled_variance(POISSON_OP, 1.0, s) == pytest.approx(expect, rel=1e-10)

    s_nb = moment_summary(ModelSpec(NB_OP, POISSON_UNIT, MEAN_11), max_lag=1)
    expect_nb = 2.0 + 1.0 / 7.0 + 262.5 / 343.0
    assert predicted_scaled_variance(NB_OP, 1.0, s_nb) == pytest.approx(expect_nb, rel=1e-10)

    zop = zip_operator(1.8)
    s_zip = moment_summary(ModelSpec(zop, POISSON_UNIT, MEAN_11), max_lag=1)
    expect_zip = 1.0 + 1.8 * (1.0 / 7.0 + (61.6 / 0.6) / 343.0)
    assert predicted_scaled_variance(zop, 1.0, s_zip) == pytest.approx(expect_zip, rel=1e-10)


def test_predicted_scaled_variance_binomial_interval():
    s = moment_summary(ModelSpec(BINOMIAL_OP, POISSON_UNIT, MEAN_11), max_lag=1)
    lo, hi = predicted_scaled_variance(BINOMIAL_OP, 1.0, s)
    assert lo == pytest.approx(1.0)
    bound = 0.25 * (1.0 / 49.0 + 3.0 * interval_hi(s.var) / 7.0**4)
    assert hi == pytest.approx(1.0 + bound, rel=1e-10)
    assert lo <= hi


def test_nb_screen_separates_dispersion_regimes():
    rng = np.random.default_rng(100)
    over, _ = simulate(ModelSpec(NB_OP, POISSON_UNIT, MeanSpec(2.8, (0.25,), (0.15,))), 4000, rng)
    vsr, flag = nb_suitability_screen(over)
    assert flag and vsr > 1.0
    # degenerate innovations with a poisson operator: V[X/M] ~ E[1/M] << 1
    under, _ = simulate(ModelSpec(POISSON_OP, DEGENERATE_ONE, MEAN_11), 4000, rng)
    vsr, flag = nb_suitability_screen(under)
    assert not flag and vsr < 1.0


def test_residual_report_fields():
    rng = np.random.default_rng(3)
    x, _ = simulate(POI_MODEL, 600, rng)
    res = fit("pq", x)
    rep = residual_report(x, res.fitted_means, POISSON_OP, res.sigma2_hat, acf_lags=6)
    assert rep.n == 600
    assert rep.pearson.shape == (600,)
    assert rep.scaled.shape == (600,)
    assert rep.residual_acf.shape == (6,)
    for val in (rep.mar, rep.msr, rep.vsr, rep.mspr):
        assert np.isfinite(val)
    assert rep.predicted_vsr is None
    rep2 = residual_report(x, res.fitted_means, POISSON_OP, res.sigma2_hat, predicted_vsr=1.4)
    assert rep2.predicted_vsr == 1.4


def test_residuals_of_a_correct_fit_are_white():
    rng = np.random.default_rng(21)
    x, _ = simulate(POI_MODEL, 10_000, rng)
    res = fit("pq", x)
    rep = residual_report(x, res.fitted_means, POISSON_OP, res.sigma2_hat)
    assert abs(np.asarray(rep.residual_acf)).max() < 4.0 / math.sqrt(x.size)
    assert rep.msr == pytest.approx(1.0, abs=0.05)
    assert rep.mspr == pytest.approx(1.0, abs=0.1)


def _manual_fit_result(mean, fitted, sigma2=1.0):
    return FitResult(
        method="pq",
        nq_r=1.0,
        order=(mean.p, mean.q),
        operator=POISSON_OP,
        mean_hat=mean,
        theta_hat=mean.theta,
        sigma2_hat=sigma2,
        ase=None,
        fitted_means=fitted,
        objective_value=0.0,
        converged=True,
        iterations=0,
        init_used=None,
    )


def test_holdout_continues_the_filter_exactly():
    rng = np.random.default_rng(31)
    x, _ = simulate(POI_MODEL, 120, rng)
    m_full = conditional_mean_path(MEAN_11, x)
    split = 90
    res = _manual_fit_result(MEAN_11, m_full[:split])
    state = filter_state(x[:split], res)
    assert state.x_tail == (float(x[split - 1]),)
    assert state.m_tail == (float(m_full[split - 1]),)
    rep = holdout_evaluate(res, state, x[split:])
    m_hold = conditional_mean_path(
        MEAN_11, x[split:], x_init=np.array([x[split - 1]]), m_init=np.array([m_full[split - 1]])
    )
    assert m_hold == pytest.approx(m_full[split:], rel=1e-12)
    expect = residual_report(x[split:], m_hold, POISSON_OP, 1.0)
    assert rep.mar == pytest.approx(expect.mar, rel=1e-12)
    assert rep.mspr == pytest.approx(expect.mspr, rel=1e-12)


def test_holdout_validates_state_shape():
    rng = np.random.default_rng(33)
    x, _ = simulate(POI_MODEL, 60, rng)
    m = conditional_mean_path(MEAN_11, x)
    res = _manual_fit_result(MEAN_11, m)
    state = filter_state(x, res)
    bad = type(state)(x_tail=(1.0, 2.0), m_tail=state.m_tail)
    with pytest.raises(DomainError):
        holdout_evaluate(res, bad, x[:10])


def test_model_vs_sample_report():
    rng = np.random.default_rng(41)
    x, _ = simulate(POI_MODEL, 5_000, rng)
    cmp = model_vs_sample_report(x, POI_MODEL, max_lag=4)
    assert cmp.n == 5_000
    assert cmp.sample_mean == pytest.approx(x.mean())
    assert cmp.sample_var == pytest.approx(x.var(ddof=1), rel=1e-12)
    assert cmp.sample_rho.shape == (4,)
    assert cmp.model.mu == pytest.approx(7.0)
    assert cmp.sample_mean == pytest.approx(cmp.model.mu, abs=0.5)
