"""Empirical Bayes direct method: EM over (theta, kernel hyperparameters, sigma2).

The impulse responses m of the GP-modeled filters are integrated out. Each
iteration runs the Gaussian E-step, then the closed-form M-step updates for
the kernel hyperparameters, the target parameters and the noise variance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as la
from scipy.optimize import minimize_scalar

from src.config import settings
from src.exceptions import (
    DimensionMismatchError,
    NonpositiveVarianceError,
    SingularNormalEquationsError,
)
from src.models import EMOptions, EMTrace, Eta, IdentResult, IterationRecord, MISOSetup
from src.services import kernels
from src.services.kernels import SSKernel
from src.services.network import DataRecord
from src.services.polynomial import impulse_response
from src.services.regression import StackedData, build_stacked, toeplitz_delay

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-8


@dataclass(frozen=True)
class PosteriorMoments:
    """Posterior of m: mean m_hat, covariance P_m = G G^T."""

    m_hat: np.ndarray
    P_m: np.ndarray
    G: np.ndarray
    l: int

    @property
    def M_hat(self) -> np.ndarray:
        return self.P_m + np.outer(self.m_hat, self.m_hat)

    @property
    def blocks(self) -> list[np.ndarray]:
        M = self.M_hat
        l = self.l
        return [M[s : s + l, s : s + l] for s in range(0, M.shape[0], l)]

    def split(self, v: np.ndarray) -> list[np.ndarray]:
        return [v[s : s + self.l] for s in range(0, v.size, self.l)]


# ---------------------------------------------------------------------------
# E-step and marginal likelihood


def _kernel_factor(eta: Eta, stacked: StackedData) -> np.ndarray:
    """Block-diagonal L_K with K = L_K L_K^T."""
    missing = [k for k in stacked.nodes if k not in eta.lambdas]
    if missing:
        raise DimensionMismatchError(f"eta has no hyperparameters for nodes {missing}")
    return la.block_diag(
        *[
            kernels.sqrt_factor(SSKernel(stacked.l, eta.betas[k], eta.lambdas[k]))
            for k in stacked.nodes
        ]
    )


def _residual(stacked: StackedData) -> np.ndarray:
    return stacked.y - stacked.target_prediction()


def e_step(eta: Eta, stacked: StackedData) -> PosteriorMoments:
    """Gaussian conditioning of m on z_j, through A = I + F^T F / sigma2, F = W L_K."""
    L_K = _kernel_factor(eta, stacked)
    F = stacked.W @ L_K
    A = np.eye(L_K.shape[0]) + F.T @ F / eta.sigma2
    R = kernels.jitchol(A, "posterior precision")

    u = F.T @ _residual(stacked) / eta.sigma2
    m_hat = L_K @ la.cho_solve((R, True), u)
    G = la.solve_triangular(R, L_K.T, lower=True).T  # L_K R^-T
    P_m = G @ G.T
    return PosteriorMoments(m_hat=m_hat, P_m=P_m, G=G, l=stacked.l)


def marginal_nll(eta: Eta, stacked: StackedData) -> float:
    """log det P + r^T P^-1 r with P = W K W^T + sigma2 I."""
    L_K = _kernel_factor(eta, stacked)
    F = stacked.W @ L_K
    r = _residual(stacked)
    N, d = F.shape
    s2 = eta.sigma2

    if d < N:
        R = kernels.jitchol(np.eye(d) + F.T @ F / s2, "marginal covariance factor")
        u = la.solve_triangular(R, F.T @ r, lower=True)
        quad = (r @ r - u @ u / s2) / s2
        return float(N * np.log(s2) + kernels.chol_logdet(R) + quad)

    R = kernels.jitchol(F @ F.T + s2 * np.eye(N), "marginal covariance")
    u = la.solve_triangular(R, r, lower=True)
    return float(kernels.chol_logdet(R) + u @ u)


def expected_sq_residual(post: PosteriorMoments, stacked: StackedData) -> float:
    """E||z_j - Phi theta - W(theta) m||^2 under the posterior."""
    r = _residual(stacked) - stacked.W @ post.m_hat
    return float(r @ r + np.sum((stacked.W @ post.G) ** 2))


def q_value(eta: Eta, post: PosteriorMoments, stacked: StackedData) -> float:
    """Q-function in the doubled, constant-free convention; stacked built at eta.theta."""
    q = -stacked.N * np.log(eta.sigma2) - expected_sq_residual(post, stacked) / eta.sigma2
    for k, block in zip(stacked.nodes, post.blocks):
        q += kernels.kernel_q(eta.betas[k], eta.lambdas[k], block)
    return float(q)


# ---------------------------------------------------------------------------
# M-step


def beta_grid(opts: EMOptions) -> np.ndarray:
    """Geometric in beta towards 0 and in 1 - beta towards 1."""
    half = opts.beta_grid_points // 2
    low = np.geomspace(opts.beta_min, 0.5, half)
    high = 1.0 - np.geomspace(0.5, 1.0 - opts.beta_max, opts.beta_grid_points - half)
    return np.unique(np.concatenate([low, high]))


def update_hyperparams(
    block: np.ndarray, current_beta: float | None = None, opts: EMOptions | None = None
) -> tuple[float, float]:
    """(beta, lambda) maximizing the kernel block of Q for posterior second moment `block`."""
    opts = opts or EMOptions()
    l = block.shape[0]
    grid = beta_grid(opts)
    values = np.array([kernels.profiled_objective(b, block) for b in grid])

    if not np.any(np.isfinite(values)):
        beta = current_beta if current_beta is not None else float(grid[len(grid) // 2])
        return beta, 0.0

    best = int(np.nanargmin(values))
    beta, value = float(grid[best]), float(values[best])
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    if hi > lo:
        refined = minimize_scalar(
            lambda b: kernels.profiled_objective(b, block),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if refined.success and refined.fun < value:
            beta, value = float(refined.x), float(refined.fun)

    if current_beta is not None and opts.beta_min <= current_beta <= opts.beta_max:
        if kernels.profiled_objective(current_beta, block) <= value:
            beta = current_beta

    lam = float(np.exp(kernels.log_trace_inverse(beta, block))) / l
    return beta, lam


def normal_equations(post: PosteriorMoments, stacked: StackedData) -> tuple[np.ndarray, np.ndarray]:
    """(A, b) with E||z_j - Phi theta - W(theta) m||^2 = theta^T A theta - 2 b^T theta + const."""
    l = stacked.l
    Phi, y, X = stacked.Phi, stacked.y, stacked.X
    m_j = post.m_hat[:l]
    M = post.M_hat
    M_jj = M[:l, :l]
    XM = X @ M[:, :l]  # X E[m m_j^T]

    Psi = np.column_stack([a @ m_j for a in stacked.A]) if stacked.A else np.zeros((stacked.N, 0))
    AM = [a @ M_jj for a in stacked.A]
    n = stacked.n_theta
    trace_aa = np.array([[np.sum(stacked.A[a] * AM[b]) for b in range(n)] for a in range(n)])
    trace_ax = np.array([np.sum(a * XM) for a in stacked.A])

    A = Phi.T @ Phi + Phi.T @ Psi + Psi.T @ Phi + trace_aa
    b = Phi.T @ (y - X @ post.m_hat) + Psi.T @ y - trace_ax
    return 0.5 * (A + A.T), b


def update_theta(post: PosteriorMoments, stacked: StackedData) -> np.ndarray:
    A, b = normal_equations(post, stacked)
    rank = int(np.linalg.matrix_rank(A))
    if rank < A.shape[0]:
        raise SingularNormalEquationsError(rank, A.shape[0])
    return la.solve(A, b, assume_a="sym")


def update_sigma(post: PosteriorMoments, stacked_new: StackedData) -> float:
    """(1/N) E||z_j - Phi theta_new - W(theta_new) m||^2 under the current posterior."""
    sigma2 = expected_sq_residual(post, stacked_new) / stacked_new.N
    if not np.isfinite(sigma2) or sigma2 <= 0.0:
        raise NonpositiveVarianceError(f"noise variance update gave {sigma2}")
    return sigma2


# ---------------------------------------------------------------------------
# Initialization and the EM loop

INIT_BETAS = (0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.98)
INIT_LAMBDA_DECADES = np.arange(-4.0, 1.01, 0.5)
INIT_SIGMA_SCALES = (0.25, 0.5, 0.7, 1.0, 1.4, 2.0, 4.0)
INIT_SIGMA_FLOOR = 1e-6  # relative to var(z_j)


def _unit_factor(beta: float, l: int) -> np.ndarray:
    return kernels.sqrt_factor(SSKernel(l, beta, 1.0))


class _HyperGrid:
    """Marginal NLL at a fixed theta as a function of per-block (lambda, beta) and sigma2.

    Keeps U = W L_1 for unit-scale kernels and its Gram matrix, so a lambda or
    sigma2 trial costs one Cholesky of a d x d matrix and a beta trial updates
    one block row of the Gram matrix.
    """

    def __init__(self, stacked: StackedData, betas: list[float]):
        self.W = stacked.W
        self.l = stacked.l
        self.r = _residual(stacked)
        self.rr = float(self.r @ self.r)
        self.U = np.hstack(
            [self.W[:, self._block(b)] @ _unit_factor(beta, self.l) for b, beta in enumerate(betas)]
        )
        self.G = self.U.T @ self.U
        self.g = self.U.T @ self.r

    def _block(self, b: int) -> slice:
        return slice(b * self.l, (b + 1) * self.l)

    def set_beta(self, b: int, beta: float) -> None:
        sl = self._block(b)
        self.U[:, sl] = self.W[:, sl] @ _unit_factor(beta, self.l)
        cross = self.U.T @ self.U[:, sl]
        self.G[:, sl] = cross
        self.G[sl, :] = cross.T
        self.g[sl] = self.U[:, sl].T @ self.r

    def nll(self, lambdas: np.ndarray, sigma2: float) -> float:
        s = np.repeat(np.sqrt(lambdas), self.l)
        A = np.eye(s.size) + np.outer(s, s) * self.G / sigma2
        R = kernels.jitchol(A, "marginal covariance factor")
        u = la.solve_triangular(R, s * self.g, lower=True)
        quad = (self.rr - u @ u / sigma2) / sigma2
        return float(self.r.size * np.log(sigma2) + kernels.chol_logdet(R) + quad)


def tune_hyperparams(eta: Eta, stacked: StackedData, opts: EMOptions) -> tuple[Eta, float]:
    """Coordinate grid search of the marginal NLL over (lambda, beta) per block, then sigma2.

    theta stays fixed and only improvements are accepted. Returns the tuned eta
    and its NLL.
    """
    nodes = stacked.nodes
    betas = [eta.betas[k] for k in nodes]
    lambdas = np.array([eta.lambdas[k] for k in nodes], dtype=float)
    sigma2 = eta.sigma2
    var = float(np.var(stacked.y)) or 1.0
    lambda_values = var * 10.0**INIT_LAMBDA_DECADES
    beta_values = [b for b in INIT_BETAS if opts.beta_min <= b <= opts.beta_max]

    grid = _HyperGrid(stacked, betas)
    best = grid.nll(lambdas, sigma2)
    start = best
    for sweep in range(opts.init_sweeps):
        for b in range(len(nodes)):
            kept = betas[b]
            for beta in beta_values:
                grid.set_beta(b, beta)
                for lam in lambda_values:
                    trial = lambdas.copy()
                    trial[b] = lam
                    value = grid.nll(trial, sigma2)
                    if value < best:
                        best, kept, lambdas = value, beta, trial
            grid.set_beta(b, kept)
            betas[b] = kept

        base = sigma2
        for scale in INIT_SIGMA_SCALES:
            value = grid.nll(lambdas, scale * base)
            if value < best:
                best, sigma2 = value, scale * base
        log.debug(f"[EM init] sweep={sweep + 1} nll={best:.6f}")

    log.debug(f"[EM init] hyperparameter grid nll {start:.6f} -> {best:.6f}")
    tuned = Eta(
        theta=eta.theta,
        lambdas={k: float(v) for k, v in zip(nodes, lambdas)},
        betas=dict(zip(nodes, betas)),
        sigma2=sigma2,
    )
    return tuned, best


def arx_fit(stacked: StackedData, order: int) -> tuple[np.ndarray, np.ndarray, float]:
    """High-order ARX of z_j on its own past and the past of every input.

    Returns the denominator series a = [1, a_1, ..., a_n], the series c of the
    target input w_i (c[0] = 0, zeros without a target) and the residual variance.
    """
    blocks = len(stacked.nodes)
    inputs = blocks + (stacked.Wi_tilde is not None)
    n = max(1, min(order, stacked.l, (stacked.N - 1) // (2 * inputs)))
    l = stacked.l
    columns = [stacked.X[:, b * l : b * l + n] for b in range(blocks)]
    if stacked.Wi_tilde is not None:
        columns.append(toeplitz_delay(stacked.Wi_tilde.signal, n, 1))
    Z = np.hstack(columns)
    coef = np.linalg.lstsq(Z, stacked.y, rcond=None)[0]
    resid = stacked.y - Z @ coef

    a = np.concatenate([[1.0], -coef[:n]])
    c = np.zeros(n + 1)
    if stacked.Wi_tilde is not None:
        c[1:] = coef[-n:]
    var = float(np.var(stacked.y)) or 1.0
    sigma2 = max(float(np.mean(resid**2)), INIT_SIGMA_FLOOR * var)
    return a, c, sigma2


def arx_theta(a: np.ndarray, c: np.ndarray, n_b: int, n_f: int) -> np.ndarray:
    """(b, f) with F C = B A on the first len(c) - 1 coefficients.

    Equation-error reduction of the ARX pair C / A to the target orders. The
    match is on power series, so an unstable F is fine as long as A cancels it.
    """
    columns = []
    if n_b:
        columns.append(toeplitz_delay(a, n_b, 1))
    if n_f:
        columns.append(toeplitz_delay(c, n_f, 1, negate=True))
    M = np.hstack(columns)[1:]
    return np.linalg.lstsq(M, c[1:], rcond=None)[0]


def initial_eta(stacked: StackedData, opts: EMOptions) -> Eta:
    """Starting point of the EM; `stacked` is restaged at every candidate theta.

    The default start compares the ARX reduction with least squares on Phi
    for theta, tunes the hyperparameters of each on the marginal NLL and keeps
    the better one. `init="random"` draws a seeded random start instead.
    """
    var = float(np.var(stacked.y)) or 1.0
    nodes = stacked.nodes
    if opts.init == "random":
        rng = np.random.default_rng(opts.seed)
        return Eta(
            theta=tuple(rng.uniform(-1.0, 1.0, stacked.n_theta)),
            lambdas={k: float(rng.uniform(0.1, 2.0) * var) for k in nodes},
            betas={k: float(rng.uniform(opts.beta_min, opts.beta_max)) for k in nodes},
            sigma2=float(rng.uniform(0.1, 1.0) * var),
        )

    a, c, sigma2 = arx_fit(stacked, opts.arx_order)
    candidates = {"no-target": ()}
    if stacked.n_theta:
        candidates = {
            "arx": tuple(arx_theta(a, c, stacked.n_b, stacked.n_theta - stacked.n_b)),
            "phi-ls": tuple(np.linalg.lstsq(stacked.Phi, stacked.y, rcond=None)[0]),
        }

    best: tuple[float, Eta] | None = None
    for name, theta in candidates.items():
        start = Eta(
            theta=theta,
            lambdas={k: var for k in nodes},
            betas={k: 0.9 for k in nodes},
            sigma2=sigma2,
        )
        eta, nll = tune_hyperparams(start, stacked.with_theta(theta), opts)
        log.debug(f"[EM init] {name} start nll={nll:.6f}")
        if best is None or nll < best[0]:
            best = (nll, eta)
    return best[1]


def relative_change(new: Eta, old: Eta, norm: str) -> float:
    ord_ = np.inf if norm == "inf" else None
    delta = np.linalg.norm(new.vector() - old.vector(), ord=ord_)
    return float(delta / max(np.linalg.norm(old.vector(), ord=ord_), np.finfo(float).tiny))


def run_em(
    rebuild: Callable[[tuple[float, ...]], StackedData],
    eta: Eta,
    opts: EMOptions,
    theta_step: bool = True,
) -> tuple[Eta, PosteriorMoments, EMTrace]:
    """Shared EM loop; `rebuild(theta)` restages the regression at a new theta."""
    stacked = rebuild(eta.theta)
    post = e_step(eta, stacked)
    nll = marginal_nll(eta, stacked)
    records = [IterationRecord(iteration=0, eta=eta, nll=nll)]
    log.info(f"[EM it=0] nll={nll:.6f}")
    termination = "max_iterations"

    for it in range(1, opts.max_iterations + 1):
        lambdas, betas = {}, {}
        for k, block in zip(stacked.nodes, post.blocks):
            betas[k], lambdas[k] = update_hyperparams(block, eta.betas[k], opts)

        theta = tuple(update_theta(post, stacked)) if theta_step and stacked.n_theta else eta.theta
        stacked_new = rebuild(theta)
        sigma2 = update_sigma(post, stacked_new)

        new = Eta(theta=theta, lambdas=lambdas, betas=betas, sigma2=sigma2)
        post = e_step(new, stacked_new)
        new_nll = marginal_nll(new, stacked_new)
        change = relative_change(new, eta, opts.norm)
        log.info(f"[EM it={it}] nll={new_nll:.6f} change={change:.3e}")
        if new_nll > nll + MONOTONE_SLACK * abs(nll):
            log.warning(f"[EM it={it}] marginal NLL increased by {new_nll - nll:.3e}")

        records.append(IterationRecord(iteration=it, eta=new, nll=new_nll, relative_change=change))
        eta, stacked, nll = new, stacked_new, new_nll
        if change < opts.tolerance:
            termination = "converged"
            break

    return eta, post, EMTrace(iterations=records, termination=termination)


def identify(
    data: DataRecord,
    setup: MISOSetup,
    opts: EMOptions | None = None,
    eta0: Eta | None = None,
) -> IdentResult:
    """Estimate theta of the target G_ji with the other MISO filters as GPs."""
    opts = opts or EMOptions()
    if data.N <= setup.n_theta:
        raise DimensionMismatchError(f"N={data.N} must exceed n_theta={setup.n_theta}")

    staged = build_stacked(data, setup, (0.0,) * setup.n_theta)
    if eta0 is None:
        eta0 = initial_eta(staged, opts)
    log.info(
        f"Identifying G_{setup.j}{setup.i}: inputs={list(setup.inputs)} "
        f"n_b={setup.n_b} n_f={setup.n_f} l={setup.l} N={setup.N}"
    )
    eta, post, trace = run_em(staged.with_theta, eta0, opts)

    result = IdentResult(
        setup=setup,
        theta_hat=eta.theta,
        eta_hat=eta,
        trace=trace,
        target_ir=(),
        gp_irs={k: tuple(m) for k, m in zip(setup.gp_nodes, post.split(post.m_hat))},
        gp_ir_std={
            k: tuple(s)
            for k, s in zip(setup.gp_nodes, post.split(np.sqrt(np.clip(np.diag(post.P_m), 0, None))))
        },
    )
    target_ir = impulse_response(result.target_tf, settings.FIT_TAPS)
    log.info(f"Finished after {len(trace.iterations) - 1} iterations ({trace.termination})")
    return result.model_copy(update={"target_ir": tuple(target_ir)})
