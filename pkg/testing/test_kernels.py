"""Tests for the stable spline kernel and its factorization."""

import numpy as np
import pytest
import scipy.linalg as la

from src.exceptions import DegenerateKernelError, IllConditionedError, KernelDomainError
from src.services import kernels
from src.services.kernels import SSKernel


def test_build_small_example():
    K = kernels.build(SSKernel(2, 0.5, 1.0))

    np.testing.assert_array_equal(K, [[0.5, 0.25], [0.25, 0.25]])


def test_build_degenerate_is_zero():
    assert not np.any(kernels.build(SSKernel(4, 0.7, 0.0)))
    assert not np.any(kernels.build(SSKernel(4, 0.0, 1.0)))


def test_kernel_domain_checked():
    with pytest.raises(KernelDomainError):
        SSKernel(3, 1.0, 1.0)
    with pytest.raises(KernelDomainError):
        SSKernel(3, 0.5, -1.0)
    with pytest.raises(KernelDomainError):
        SSKernel(0, 0.5, 1.0)


def test_factorize_single_tap():
    f = kernels.factorize(0.3, 1)

    np.testing.assert_array_equal(f.L, [[1.0]])
    np.testing.assert_allclose(f.D, [0.3])


def test_factorize_reconstructs_kernel():
    f = kernels.factorize(0.9, 5)

    K = f.L @ np.diag(f.D) @ f.L.T

    np.testing.assert_allclose(K, kernels.build(SSKernel(5, 0.9, 1.0)), rtol=1e-12, atol=1e-15)


def test_factorize_rejects_zero_beta():
    with pytest.raises(DegenerateKernelError):
        kernels.factorize(0.0, 4)


def test_logdet_matches_dense_slogdet():
    k = SSKernel(20, 0.7, 1.0)

    logdet, _ = kernels.logdet_and_solve(k, np.eye(20))

    sign, dense = np.linalg.slogdet(kernels.build(k))
    assert sign == 1.0
    assert logdet == pytest.approx(dense, abs=1e-9)


def test_logdet_matches_dense_cholesky_long_kernel():
    k = SSKernel(100, 0.99, 1.0)

    logdet, _ = kernels.logdet_and_solve(k, np.zeros(100))

    R = la.cholesky(kernels.build(k), lower=True)
    assert logdet == pytest.approx(2 * np.sum(np.log(np.diag(R))), abs=1e-8)


def test_solve_of_kernel_is_identity():
    k = SSKernel(10, 0.8, 2.0)

    _, X = kernels.logdet_and_solve(k, kernels.build(k))

    np.testing.assert_allclose(X, np.eye(10), atol=1e-9)


def test_solve_random_rhs():
    k = SSKernel(50, 0.9, 1.5)
    B = np.random.default_rng(0).standard_normal((50, 3))

    _, X = kernels.logdet_and_solve(k, B)

    assert np.linalg.norm(kernels.build(k) @ X - B) < 1e-9


def test_logdet_and_solve_degenerate():
    with pytest.raises(DegenerateKernelError):
        kernels.logdet_and_solve(SSKernel(3, 0.5, 0.0), np.ones(3))
    with pytest.raises(DegenerateKernelError):
        kernels.logdet_and_solve(SSKernel(3, 0.0, 1.0), np.ones(3))


@pytest.mark.parametrize("beta", [0.0, 0.5, 0.99])
def test_kernel_is_positive_semidefinite(beta):
    K = kernels.build(SSKernel(200, beta, 1.0))

    assert np.min(np.linalg.eigvalsh(K)) >= -1e-12


def test_kernel_diagonal_decreases():
    d = np.diag(kernels.build(SSKernel(30, 0.8, 1.0)))

    assert np.all(np.diff(d) < 0)


def test_sqrt_factor_squares_to_kernel():
    k = SSKernel(15, 0.6, 3.0)

    L = kernels.sqrt_factor(k)

    np.testing.assert_allclose(L @ L.T, kernels.build(k), atol=1e-12)
    assert not np.any(kernels.sqrt_factor(SSKernel(4, 0.6, 0.0)))


def test_trace_inverse_of_scaled_kernel():
    M = 2.5 * kernels.build(SSKernel(30, 0.6, 1.0))

    trace = np.exp(kernels.log_trace_inverse(0.6, M))

    assert trace == pytest.approx(2.5 * 30, rel=1e-8)


def test_trace_inverse_matches_dense_solve():
    rng = np.random.default_rng(3)
    V = rng.standard_normal((12, 12))
    M = V @ V.T

    trace = np.exp(kernels.log_trace_inverse(0.7, M))

    dense = np.trace(np.linalg.solve(kernels.build(SSKernel(12, 0.7, 1.0)), M))
    assert trace == pytest.approx(dense, rel=1e-8)


def test_jitchol_positive_definite():
    A = np.array([[4.0, 2.0], [2.0, 3.0]])

    R = kernels.jitchol(A)

    np.testing.assert_allclose(R @ R.T, A)


def test_jitchol_recovers_semidefinite_with_jitter():
    R = kernels.jitchol(np.ones((3, 3)), "rank-one matrix")

    assert np.all(np.isfinite(R))


def test_jitchol_negative_definite_raises():
    with pytest.raises(IllConditionedError):
        kernels.jitchol(-np.eye(3))
