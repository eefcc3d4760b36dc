"""Tests for the direct prediction-error baseline."""

import numpy as np
import pytest

from src.exceptions import DimensionMismatchError, UnstablePredictorError
from src.models import MISOSetup, ModuleOrders, NetworkModel, NoiseModel, PemResult, PemSpec, RationalTF
from src.services import baseline
from src.services.network import simulate


def _single_module(noise_variance=0.0):
    noise = {2: NoiseModel(variance=noise_variance)} if noise_variance else {}
    return NetworkModel(
        L=2,
        modules={(2, 1): RationalTF.from_coeffs([0, 1, 0.05], [1, 1, 0.6])},
        noise=noise,
        references=(1,),
    )


def test_noise_free_single_module_is_recovered():
    data = simulate(_single_module(), 300, seed=1, warmup=0)
    setup = MISOSetup(j=2, i=1, n_b=2, n_f=2, N=300)
    spec = PemSpec(multistart=3, gradient_tol=1e-10, max_iterations=200, seed=2)

    result = baseline.direct_pem(data, setup, spec)

    np.testing.assert_allclose(result.theta, [1, 0.05, 1, 0.6], atol=1e-6)
    assert result.objective < 1e-10
    assert result.converged
    assert result.gradient_norm < spec.gradient_tol
    assert np.all(np.diff(result.objective_trace) <= 0)
    assert result.objective_trace[-1] == result.objective
    assert result.c == () and result.d == ()


def test_noise_free_miso_recovers_every_module():
    net = NetworkModel(
        L=3,
        modules={
            (3, 1): RationalTF.from_coeffs([0, 1, 0.05], [1, 1, 0.6]),
            (3, 2): RationalTF.from_coeffs([0, 0.09], [1, 0.5]),
        },
        references=(1, 2),
    )
    data = simulate(net, 400, seed=3, warmup=0)
    setup = MISOSetup(j=3, i=1, inputs=(2,), n_b=2, n_f=2, N=400)
    spec = PemSpec(module_orders={2: ModuleOrders(n_b=1, n_f=1)}, multistart=3, gradient_tol=1e-10, max_iterations=200)

    result = baseline.direct_pem(data, setup, spec)

    np.testing.assert_allclose(result.theta, [1, 0.05, 1, 0.6], atol=1e-6)
    np.testing.assert_allclose(result.modules[2].b + result.modules[2].f, [0.09, 0.5], atol=1e-6)
    assert result.converged
    assert result.gradient_norm < spec.gradient_tol
    assert np.all(np.diff(result.objective_trace) <= 0)


def test_residuals_of_noisy_fit_are_white():
    data = simulate(_single_module(0.01), 1000, seed=4, warmup=0)
    setup = MISOSetup(j=2, i=1, n_b=2, n_f=2, N=1000)
    spec = PemSpec(multistart=2, seed=0)

    result = baseline.direct_pem(data, setup, spec)
    eps = baseline.prediction_errors(data, setup, spec, result)

    eps = eps - eps.mean()
    acf = np.array([eps[k:] @ eps[:-k] for k in range(1, 11)]) / (eps @ eps)
    assert np.all(np.abs(acf) < 4 / np.sqrt(1000))
    assert result.sigma2 == pytest.approx(0.01, rel=0.2)


def test_thread_pool_gives_the_same_answer():
    data = simulate(_single_module(0.05), 300, seed=5)
    setup = MISOSetup(j=2, i=1, n_b=2, n_f=2, N=300)

    serial = baseline.direct_pem(data, setup, PemSpec(multistart=3, seed=1, workers=1))
    pooled = baseline.direct_pem(data, setup, PemSpec(multistart=3, seed=1, workers=3))

    assert serial == pooled


def test_setup_checks():
    data = simulate(_single_module(0.05), 50, seed=0)

    with pytest.raises(DimensionMismatchError):
        baseline.direct_pem(data, MISOSetup(j=2, i=1, n_b=2, n_f=2, N=40), PemSpec())
    with pytest.raises(DimensionMismatchError):
        baseline.direct_pem(data, MISOSetup(j=2, i=1, inputs=(3,), n_b=2, n_f=2, N=50), PemSpec())


def test_unstable_fitted_model_is_rejected():
    data = simulate(_single_module(0.05), 50, seed=0)
    setup = MISOSetup(j=2, i=1, n_b=1, n_f=1, N=50)
    unstable = PemResult(
        theta=(1.0, -1.5),
        modules={},
        sigma2=1.0,
        objective=1.0,
        gradient_norm=0.0,
        converged=True,
        iterations=0,
    )

    with pytest.raises(UnstablePredictorError):
        baseline.prediction_errors(data, setup, PemSpec(), unstable)

