"""First-order stable spline kernel and safe Cholesky primitives."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.special import logsumexp

from src.exceptions import DegenerateKernelError, IllConditionedError, KernelDomainError

log = logging.getLogger(__name__)

JITTER = 1e-10


@dataclass(frozen=True)
class SSKernel:
    """K[x, y] = lam * beta^max(x, y), x, y = 1..l."""

    l: int
    beta: float
    lam: float

    def __post_init__(self):
        if self.l < 1:
            raise KernelDomainError(f"kernel dimension must be positive, got {self.l}")
        if not 0.0 <= self.beta < 1.0:
            raise KernelDomainError(f"beta must lie in [0, 1), got {self.beta}")
        if self.lam < 0.0:
            raise KernelDomainError(f"lambda must be nonnegative, got {self.lam}")


@dataclass(frozen=True)
class KernelFactorization:
    """K_beta = L diag(D) L^T with L[x, m] = beta^(x - m) for x >= m."""

    beta: float
    L: np.ndarray
    log_D: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return np.exp(self.log_D)

    @property
    def l(self) -> int:
        return self.log_D.size


def build(k: SSKernel) -> np.ndarray:
    idx = np.arange(1, k.l + 1)
    return k.lam * k.beta ** np.maximum.outer(idx, idx).astype(float)


def _log_D(beta: float, l: int) -> np.ndarray:
    m = np.arange(1, l + 1)
    log_d = m * np.log(beta) + np.log1p(-beta)
    log_d[0] = np.log(beta)
    return log_d


def _lower(beta: float, l: int) -> np.ndarray:
    lag = np.subtract.outer(np.arange(l), np.arange(l))
    return np.where(lag >= 0, beta ** np.maximum(lag, 0), 0.0)


def _check_beta(beta: float) -> None:
    if beta == 0.0:
        raise DegenerateKernelError("beta = 0 gives the zero kernel")
    if not 0.0 < beta < 1.0:
        raise KernelDomainError(f"beta must lie in (0, 1), got {beta}")


def factorize(beta: float, l: int) -> KernelFactorization:
    _check_beta(beta)
    return KernelFactorization(beta=beta, L=_lower(beta, l), log_D=_log_D(beta, l))


def _apply_inverse_L(beta: float, B: np.ndarray) -> np.ndarray:
    """L^-1 B = (I - beta S) B, S the lower shift."""
    out = B.copy()
    out[1:] -= beta * B[:-1]
    return out


def _apply_inverse_LT(beta: float, B: np.ndarray) -> np.ndarray:
    out = B.copy()
    out[:-1] -= beta * B[1:]
    return out


def logdet_and_solve(k: SSKernel, B: np.ndarray) -> tuple[float, np.ndarray]:
    """(log det K, K^-1 B) through the bidiagonal inverse of L."""
    if k.lam == 0.0:
        raise DegenerateKernelError("lambda = 0 gives the zero kernel")
    _check_beta(k.beta)
    B = np.asarray(B, dtype=float)
    vector = B.ndim == 1
    B2 = B[:, None] if vector else B
    if B2.shape[0] != k.l:
        raise KernelDomainError(f"right-hand side has {B2.shape[0]} rows, kernel is {k.l}")

    log_d = _log_D(k.beta, k.l)
    Y = _apply_inverse_L(k.beta, B2) * np.exp(-log_d)[:, None]
    X = _apply_inverse_LT(k.beta, Y) / k.lam
    logdet = k.l * np.log(k.lam) + float(np.sum(log_d))
    return logdet, X[:, 0] if vector else X


def sqrt_factor(k: SSKernel) -> np.ndarray:
    """Lower-triangular L_K with K = L_K L_K^T (zero for a degenerate kernel)."""
    if k.lam == 0.0 or k.beta == 0.0:
        return np.zeros((k.l, k.l))
    return np.sqrt(k.lam) * _lower(k.beta, k.l) * np.exp(0.5 * _log_D(k.beta, k.l))[None, :]


def log_trace_inverse(beta: float, M: np.ndarray) -> float:
    """log tr(K_beta^-1 M) for lambda = 1, in O(l)."""
    _check_beta(beta)
    d = np.diag(M).astype(float)
    C = d.copy()
    C[1:] = d[1:] - 2.0 * beta * np.diag(M, -1) + beta**2 * d[:-1]
    C = np.clip(C, 0.0, None)
    with np.errstate(divide="ignore"):
        return float(logsumexp(np.log(C) - _log_D(beta, d.size)))


def profiled_objective(beta: float, M: np.ndarray) -> float:
    """l log tr(K_beta^-1 M) + log det K_beta, minimized over beta."""
    l = M.shape[0]
    return l * log_trace_inverse(beta, M) + float(np.sum(_log_D(beta, l)))


def kernel_q(beta: float, lam: float, M: np.ndarray) -> float:
    """-log det(lam K_beta) - tr((lam K_beta)^-1 M), the kernel block of the Q-function."""
    l = M.shape[0]
    logdet = l * np.log(lam) + float(np.sum(_log_D(beta, l)))
    return -logdet - float(np.exp(log_trace_inverse(beta, M))) / lam


def jitchol(A: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, retrying once with diagonal jitter."""
    try:
        return la.cholesky(A, lower=True)
    except la.LinAlgError:
        pass
    dim = A.shape[0]
    jitter = JITTER * np.trace(A) / dim
    log.warning(f"Cholesky of {what} failed, retrying with jitter {jitter:.3e}")
    try:
        return la.cholesky(A + jitter * np.eye(dim), lower=True)
    except la.LinAlgError:
        raise IllConditionedError(
            f"{what} is not positive definite", condition=float(np.linalg.cond(A))
        ) from None


def chol_logdet(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))
