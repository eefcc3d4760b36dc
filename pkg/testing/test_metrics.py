"""Tests for fit metrics and the Monte Carlo harness."""

import numpy as np
import pytest

from src.exceptions import ConstantTruthError, DimensionMismatchError
from src.models import EMOptions, MonteCarloOptions
from src.services import metrics
from src.services.network import CASE_THETA


def test_fit_examples():
    assert metrics.fit_impulse([1, 0], [1, 0]) == 1.0
    assert metrics.fit_impulse([1, 0], [0, 0]) == pytest.approx(1 - np.sqrt(2), abs=1e-5)


def test_fit_scales_with_error():
    g0 = np.array([0.0, 1.0, -0.95, 0.35])
    for c in (0.5, -0.25):
        assert metrics.fit_impulse(g0, g0 + c * (g0 - g0.mean())) == pytest.approx(1 - abs(c))


def test_fit_params_case2_offset():
    theta0 = CASE_THETA["case2"]

    fit = metrics.fit_params(theta0, np.array(theta0) + 0.01)

    assert fit == pytest.approx(0.98304, abs=1e-4)


def test_fit_constant_truth():
    with pytest.raises(ConstantTruthError):
        metrics.fit_impulse([2, 2, 2], [1, 2, 3])


def test_fit_length_mismatch():
    with pytest.raises(DimensionMismatchError):
        metrics.fit_params([1, 2], [1, 2, 3])


def test_draw_seeds_distinct_and_reproducible():
    seeds = metrics.draw_seeds(0, 50)

    assert len(set(seeds)) == 50
    assert seeds == metrics.draw_seeds(0, 50)
    assert all(0 <= s < 2**31 for s in seeds)


def test_default_pem_spec_uses_true_orders(case1):
    spec = metrics.default_pem_spec(case1, 3, 1, seed=3)

    assert {k: (o.n_b, o.n_f) for k, o in spec.module_orders.items()} == {2: (1, 1), 4: (4, 4)}
    assert (spec.n_c, spec.n_d) == (3, 3)


def _small_options(**kw):
    defaults = dict(
        case="case1",
        runs=2,
        samples=150,
        kernel_length=15,
        fit_taps=50,
        warmup=100,
        em=EMOptions(max_iterations=3),
    )
    return MonteCarloOptions(**{**defaults, **kw})


def test_montecarlo_is_deterministic():
    first = metrics.run_montecarlo(_small_options())
    second = metrics.run_montecarlo(_small_options())

    assert first.model_dump() == second.model_dump()
    assert first.runtime is None
    assert all(o.runtime_s is None for o in first.outcomes)
    assert first.methods["ebdm"].runs == 2


def test_montecarlo_workers_do_not_change_results():
    serial = metrics.run_montecarlo(_small_options())
    pooled = metrics.run_montecarlo(_small_options(workers=2))

    assert serial.outcomes == pooled.outcomes


def test_montecarlo_records_timing_on_request():
    summary = metrics.run_montecarlo(_small_options(runs=1, record_timing=True))

    assert summary.runtime["total_s"] >= 0
    assert summary.outcomes[0].runtime_s is not None


def test_pem_on_unstable_case_is_recorded_as_failure():
    summary = metrics.run_montecarlo(_small_options(case="case2", runs=1, methods=["direct_pem"]))

    assert summary.methods["direct_pem"].failures == 1
    assert "UnstablePredictorError" in summary.outcomes[0].error
    assert summary.methods["direct_pem"].median_fit_impulse is None


def test_noise_table_follows_the_sweep():
    summary = metrics.run_montecarlo(_small_options(runs=1, sigma3_sweep=[0.1, 0.5]))

    assert [row.sigma3_squared for row in summary.noise_table] == [0.1, 0.5]
    assert [row.dummy_variance for row in summary.noise_table] == pytest.approx([0.1, 0.5])
    assert len(summary.outcomes) == 2


@pytest.mark.slow
def test_ebdm_case1_accuracy():
    summary = metrics.run_montecarlo(MonteCarloOptions(case="case1", runs=20, samples=500, seed=1))

    stats = summary.methods["ebdm"]
    assert stats.failures == 0
    np.testing.assert_allclose(stats.theta_mean, CASE_THETA["case1"], atol=0.1)
    assert stats.median_fit_impulse >= 0.8


@pytest.mark.slow
def test_ebdm_case2_parameter_fit():
    summary = metrics.run_montecarlo(MonteCarloOptions(case="case2", runs=10, samples=500, kernel_length=200, seed=2))

    assert summary.methods["ebdm"].median_fit_params > 0.9


@pytest.mark.slow
@pytest.mark.parametrize("case,sweep", [("case1", [0.1, 0.5, 1.0]), ("case2", [0.1, 0.5])])
def test_noise_estimate_tracks_dummy_variance(case, sweep):
    summary = metrics.run_montecarlo(MonteCarloOptions(case=case, runs=10, samples=500, seed=5, sigma3_sweep=sweep))

    for row in summary.noise_table:
        assert row.failures == 0
        assert row.mean_estimate == pytest.approx(row.dummy_variance, rel=0.2)


@pytest.mark.slow
def test_nonparametric_recovery_case1():
    summary = metrics.run_montecarlo(MonteCarloOptions(case="case1", runs=10, samples=500, methods=["nonparam"], seed=3))

    assert summary.methods["nonparam"].median_fit_impulse >= 0.6


@pytest.mark.slow
def test_ebdm_spread_not_worse_than_pem_case1():
    summary = metrics.run_montecarlo(
        MonteCarloOptions(case="case1", runs=20, samples=500, methods=["ebdm", "direct_pem"], seed=4)
    )

    ebdm_std = np.array(summary.methods["ebdm"].theta_std)
    pem_std = np.array(summary.methods["direct_pem"].theta_std)
    assert np.mean(ebdm_std) <= np.mean(pem_std)
