"""End-to-end acceptance suite.

Each test covers one numbered criterion and prints a single
``CRITERION <n>: PASS`` / ``FAIL`` line (``SKIP`` for the data-dependent
one) so a run can be grepped for the verdict; run with ``pytest -s`` to
see the lines as they appear.  Reference numbers are frozen targets for
these experiments; the desk-scale studies use widened tolerances that
account for their reduced replication counts.
"""

import math
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from cmem import (
    BINOMIAL_OP,
    EQ,
    FitSpec,
    MeanSpec,
    MisspecConfig,
    ModelSpec,
    NB_OP,
    NQ,
    PQ,
    POISSON_OP,
    POISSON_UNIT,
    SimStudyConfig,
    W2,
    acf_closed_form_11,
    conditional_mean_path,
    conditional_pmf,
    conditional_support,
    estimate_sigma2,
    filter_state,
    fit,
    holdout_evaluate,
    mean_gradient_path,
    misspecification_report,
    moment_summary,
    nu,
    residual_report,
    run_sim_study,
    sample_acf,
    sample_operator,
    simulate,
    three_point_from_sigma2,
    zip_operator,
)
from cmem.cli import read_count_series

MEAN_11 = MeanSpec(2.8, (0.4,), (0.2,))
POI_MODEL = ModelSpec(POISSON_OP, POISSON_UNIT, MEAN_11)
DATA_DIR = Path(__file__).resolve().parents[1] / "data"


@contextmanager
def criterion(num: int, label: str):
    try:
        yield
    except BaseException:
        print(f"CRITERION {num}: FAIL ({label})")
        raise
    print(f"CRITERION {num}: PASS ({label})")


def conditional_pgf(op, alpha: float, eps: int, u: float) -> float:
    """Closed-form pgf of the conditional law, the oracle side of the
    duality check (the pmf side goes through the scipy mass functions)."""
    if op.kind == "poisson":
        return math.exp(alpha * eps * (u - 1.0))
    if op.kind == "nb":
        return (1.0 + alpha - alpha * u) ** (-eps)
    if op.kind == "binomial":
        fl = math.floor(alpha)
        fr = alpha - fl
        return u ** (fl * eps) * (1.0 - fr + fr * u) ** eps
    lam = alpha * eps + op.zip_kappa - 1.0
    om = (op.zip_kappa - 1.0) / lam
    return om + (1.0 - om) * math.exp(lam * (u - 1.0))


def test_criterion_01_operator_laws():
    ops = (POISSON_OP, NB_OP, BINOMIAL_OP, zip_operator(1.8))
    rng = np.random.default_rng(20260816)
    with criterion(1, "operator moment laws and pgf-pmf duality"):
        for op in ops:
            for _ in range(50):
                alpha = float(rng.uniform(0.05, 2.5))
                eps = int(rng.integers(1, 6))
                ks = conditional_support(op, alpha, eps)
                w = conditional_pmf(op, alpha, eps, ks)
                mean = float(ks @ w)
                var = float(((ks - alpha * eps) ** 2) @ w)
                assert abs(mean - alpha * eps) <= 1e-9
                assert abs(var - nu(op, alpha) * eps) <= 1e-9
                for u in (0.0, 0.3, 0.7, 1.0):
                    lhs = float(w @ np.power(float(u), ks))
                    assert abs(lhs - conditional_pgf(op, alpha, eps, u)) <= 1e-8


def test_criterion_02_binomial_operator_structure():
    rng = np.random.default_rng(7)
    with criterion(2, "binomial operator range, variance bound, determinism"):
        for alpha in (0.3, 1.0, 1.7, 2.0, 3.25):
            fl = math.floor(alpha)
            for eps in (1, 2, 5):
                ks = conditional_support(BINOMIAL_OP, alpha, eps)
                assert np.array_equal(ks, np.arange(fl * eps, (fl + 1) * eps + 1))
                w = conditional_pmf(BINOMIAL_OP, alpha, eps, ks)
                assert w.sum() == pytest.approx(1.0, abs=1e-12)
                if alpha != fl:
                    assert (w > 0.0).all()
        for alpha in np.linspace(0.01, 4.0, 400):
            assert 0.0 <= nu(BINOMIAL_OP, float(alpha)) <= 0.25
        for alpha in (1.0, 2.0, 3.0):
            for eps in (1, 3, 6):
                draws = {sample_operator(BINOMIAL_OP, alpha, eps, rng) for _ in range(20)}
                assert draws == {int(alpha) * eps}
                assert conditional_pmf(BINOMIAL_OP, alpha, eps, int(alpha) * eps) == pytest.approx(1.0)


def test_criterion_03_moment_engine():
    with criterion(3, "stationary moments: closed form, solver, simulation"):
        summ = moment_summary(POI_MODEL, max_lag=3)
        assert summ.mu == pytest.approx(7.0, abs=1e-12)
        closed = acf_closed_form_11(0.4, 0.2, 3)
        assert closed[0] == pytest.approx(0.44, abs=1e-12)
        for k in (2, 3):
            assert closed[k - 1] == pytest.approx(0.6 ** (k - 1) * 0.44, abs=1e-12)
        assert np.max(np.abs(np.asarray(summ.rho) - closed)) < 1e-10

        x, _ = simulate(POI_MODEL, 10**6, np.random.default_rng(31), burn_in=2000)
        full = sample_acf(x, 3)
        block_acf = np.array([sample_acf(b, 3) for b in x.reshape(100, 10**4)])
        se = block_acf.std(axis=0, ddof=1) / 10.0
        assert np.all(np.abs(full - closed) <= 3.0 * se)


def test_criterion_04_estimator_identities():
    rng = np.random.default_rng(41)
    with criterion(4, "sigma2 offset identity and operator-free theta"):
        for _ in range(20):
            n = int(rng.integers(30, 200))
            m = rng.uniform(1.5, 9.0, size=n)
            x = rng.poisson(m)
            s2_poi, _ = estimate_sigma2(POISSON_OP, x, m)
            s2_nb, _ = estimate_sigma2(NB_OP, x, m)
            assert s2_nb == s2_poi - 1.0
        for seed in (1, 2, 3):
            x, _ = simulate(POI_MODEL, 600, np.random.default_rng(seed))
            for kind in (PQ, NQ, EQ):
                thetas = [
                    fit(kind, x, operator=op).theta_hat
                    for op in (POISSON_OP, NB_OP, BINOMIAL_OP)
                ]
                assert np.array_equal(thetas[0], thetas[1])
                assert np.array_equal(thetas[0], thetas[2])


def test_criterion_05_gradient_check():
    rng = np.random.default_rng(53)
    with criterion(5, "analytic mean gradient vs central differences"):
        for _ in range(100):
            a1 = float(rng.uniform(0.05, 0.55))
            b1 = float(rng.uniform(0.05, 0.85 - a1))
            mean = MeanSpec(float(rng.uniform(0.5, 4.0)), (a1,), (b1,))
            x = rng.poisson(float(rng.uniform(2.0, 8.0)), size=60)
            grad = mean_gradient_path(mean, x)
            theta = mean.theta
            fd = np.empty_like(grad)
            for j in range(theta.size):
                h = 1e-6 * max(1.0, abs(theta[j]))
                up, dn = theta.copy(), theta.copy()
                up[j] += h
                dn[j] -= h
                m_up = conditional_mean_path(MeanSpec.from_theta(up, 1, 1), x)
                m_dn = conditional_mean_path(MeanSpec.from_theta(dn, 1, 1), x)
                fd[:, j] = (m_up - m_dn) / (2.0 * h)
            rel = np.abs(fd - grad) / np.maximum(1.0, np.abs(fd))
            assert rel.max() < 1e-5


# Frozen targets for the desk-scale replication study at n = 1000
# (trimmed mean and sampling SD of each estimator for this DGP, as
# established by large-replication runs of the same experiment).
STUDY_MEANS = {
    "pq-poisson": (2.871, 0.395, 0.192, 1.000),
    "nq-poisson": (2.839, 0.399, 0.194, 0.999),
    "eq-poisson": (2.837, 0.399, 0.195, 0.999),
}
STUDY_SSES = {
    "pq-poisson": (0.406, 0.045, 0.068, 0.061),
    "nq-poisson": (0.375, 0.041, 0.064, 0.061),
    "eq-poisson": (0.376, 0.041, 0.064, 0.061),
    "2w-poisson": (0.378, 0.041, 0.064, 0.062),
}
PARAMS = ("a0", "a1", "b1", "sigma2")


def test_criterion_06_replication_study():
    from cmem.cli import _load_config, simstudy_config_from_doc

    config = simstudy_config_from_doc(_load_config("desk_reference")["simstudy"])
    with criterion(6, "desk-scale replication study vs frozen targets"):
        result = run_sim_study(config)
        assert not result.fits["flagged"].any()
        cells = result.params.set_index(["method", "param"])
        for method, refs in STUDY_MEANS.items():
            for param, ref in zip(PARAMS, refs):
                got = float(cells.loc[(method, param), "trimmed_mean"])
                assert abs(got - ref) <= 0.02, (method, param, got, ref)
        for method, refs in STUDY_SSES.items():
            for param, ref in zip(PARAMS, refs):
                row = cells.loc[(method, param)]
                assert abs(float(row["sse"]) - ref) <= 0.20 * ref, (method, param)
                assert abs(float(row["ase_mean"]) - float(row["sse"])) <= 0.20 * float(
                    row["sse"]
                ), (method, param)


def test_criterion_07_wrong_operator_direction():
    config = MisspecConfig(
        dgps=(
            ModelSpec(BINOMIAL_OP, three_point_from_sigma2(0.4), MEAN_11),
            ModelSpec(POISSON_OP, POISSON_UNIT, MEAN_11),
        ),
        wrong_operators=(POISSON_OP, BINOMIAL_OP),
        estimators=(PQ,),
        sample_sizes=(1000,),
        replications=200,
        seed=71,
        n_jobs=0,
        dgp_labels=("bin-dgp", "poi-dgp"),
    )
    with criterion(7, "squared-residual penalty under a wrong operator"):
        report = misspecification_report(config).set_index("dgp")
        gap_bin = float(report.loc["bin-dgp", "mspr_gap"])
        gap_poi = float(report.loc["poi-dgp", "mspr_gap"])
        assert 0.005 <= gap_bin <= 0.025, gap_bin
        assert abs(gap_poi) < 0.005, gap_poi


def test_criterion_08_softplus_misspecification():
    soft = ModelSpec(
        POISSON_OP, POISSON_UNIT, MeanSpec(2.8, (0.4,), (0.2,), softplus_c=2.0)
    )
    config = SimStudyConfig(
        dgps=(soft, POI_MODEL),
        fit_specs=(FitSpec(PQ, POISSON_OP),),
        sample_sizes=(1000,),
        replications=200,
        seed=83,
        n_jobs=0,
        dgp_labels=("softplus-c2", "linear"),
    )
    with criterion(8, "absolute-residual penalty under a softplus response"):
        fits = run_sim_study(config).fits.set_index("dgp")
        gap = float(fits.loc["softplus-c2", "mean_mar"]) - float(
            fits.loc["linear", "mean_mar"]
        )
        assert 0.2 <= gap <= 0.3, gap


# Reference fits for the two benchmark count series (weekly infection
# counts, n = 646 + 84 holdout; 5-minute transaction counts, n = 2825 +
# 100 holdout).  The files are not bundled; see README for how to build
# data/ecoli.csv and data/wpp.csv.  The mean/variance fingerprints guard
# against fitting the wrong series.
ECOLI_FILE = DATA_DIR / "ecoli.csv"
WPP_FILE = DATA_DIR / "wpp.csv"


def test_criterion_09_benchmark_series():
    if not (ECOLI_FILE.is_file() and WPP_FILE.is_file()):
        print(
            "CRITERION 9: SKIP (benchmark data not found; place data/ecoli.csv "
            "and data/wpp.csv as described in the README to enable this check)"
        )
        pytest.skip("benchmark data files not present")
    with criterion(9, "benchmark series fits, diagnostics, holdout"):
        x = np.asarray(read_count_series(str(ECOLI_FILE)))
        assert x.size == 730, f"ecoli.csv should hold 730 counts, got {x.size}"
        train, hold = x[:646], x[646:]
        assert abs(train.mean() - 20.334) < 0.01, "ecoli fingerprint mismatch (mean)"
        assert abs(train.var(ddof=1) - 88.753) < 0.2, "ecoli fingerprint mismatch (var)"

        res = fit(PQ, train)
        assert np.max(np.abs(res.theta_hat - (2.887, 0.378, 0.481))) < 1e-2
        assert abs(res.sigma2_hat - 0.063) < 1e-2
        rep = residual_report(train, res.fitted_means, POISSON_OP, res.sigma2_hat)
        assert abs(rep.mar - 5.154) < 5e-3
        s2_bin, _ = estimate_sigma2(BINOMIAL_OP, train, res.fitted_means)
        rep_bin = residual_report(train, res.fitted_means, BINOMIAL_OP, s2_bin)
        assert abs(rep_bin.mspr - 1.000) < 5e-3
        hold_rep = holdout_evaluate(res, filter_state(train, res), hold)
        assert abs(hold_rep.mar - 6.249) < 1e-2

        y = np.asarray(read_count_series(str(WPP_FILE)))
        assert y.size == 2925, f"wpp.csv should hold 2925 counts, got {y.size}"
        train2, hold2 = y[:2825], y[2825:]
        assert abs(train2.mean() - 8.144) < 0.01, "wpp fingerprint mismatch (mean)"
        assert abs(train2.var(ddof=1) - 35.976) < 0.2, "wpp fingerprint mismatch (var)"

        res2 = fit(PQ, train2)
        assert np.max(np.abs(res2.theta_hat - (0.792, 0.268, 0.634))) < 1e-2
        hold_rep2 = holdout_evaluate(res2, filter_state(train2, res2), hold2)
        assert abs(hold_rep2.mar - 3.613) < 1e-2


def test_criterion_10_self_consistency():
    with criterion(10, "scaled residual targets on a self-fit"):
        x, _ = simulate(POI_MODEL, 10**5, np.random.default_rng(101), burn_in=2000)
        res = fit(PQ, x)
        rep = residual_report(x, res.fitted_means, POISSON_OP, res.sigma2_hat)
        assert 0.97 <= rep.mspr <= 1.03, rep.mspr
        assert 0.99 <= rep.msr <= 1.01, rep.msr
