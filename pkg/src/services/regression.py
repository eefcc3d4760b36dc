"""Regression staging for the MISO node equation.

The node equation at j is written as

    z_j = Phi theta + W(theta) m + e

where z_j = w_j - r_j, Phi = Wji M holds the regressors of the parametric
target, m stacks the truncated impulse responses of the GP-modeled filters
and W(theta) = [W~(theta) W_k1 ... W_kp] with

    W~(theta) = W_j + sum_a theta_a A_a.

A_a is the derivative of W~ with respect to theta_a: a negated delay-(s+2)
Toeplitz of w_i for the B coefficients and a delay-(s+2) Toeplitz of z_j for
the F coefficients. W_ji itself (N x 2N) is only materialized on request.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import toeplitz

from src.exceptions import DimensionMismatchError
from src.models import MISOSetup, NonparamSetup
from src.services.network import DataRecord


@dataclass(frozen=True)
class ToeplitzBlock:
    """Generating vector plus (cols, delay, sign) of a causal Toeplitz block."""

    signal: np.ndarray
    cols: int
    delay: int = 1
    negate: bool = False

    def dense(self) -> np.ndarray:
        return toeplitz_delay(self.signal, self.cols, self.delay, self.negate)


@dataclass(frozen=True)
class StackedData:
    y: np.ndarray  # z_j
    X: np.ndarray  # [W_j W_k1 ... W_kp], theta independent
    W: np.ndarray  # [W~(theta) W_k1 ... W_kp]
    Phi: np.ndarray  # Wji M, N x n_theta
    A: tuple[np.ndarray, ...]  # dW~/dtheta_a, each N x l
    theta: tuple[float, ...]
    nodes: tuple[int, ...]  # GP index set, j first
    l: int
    Wi_tilde: ToeplitzBlock | None = None
    Wj_tilde: ToeplitzBlock | None = None
    n_b: int = 0  # leading B columns of Phi

    @property
    def N(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_theta(self) -> int:
        return self.Phi.shape[1]

    def target_prediction(self) -> np.ndarray:
        return self.Phi @ np.asarray(self.theta, dtype=float) if self.n_theta else np.zeros(self.N)

    def with_theta(self, theta) -> StackedData:
        """Same data restaged at a new theta; only W~ moves."""
        theta = tuple(float(t) for t in np.asarray(theta, dtype=float).ravel())
        if len(theta) != self.n_theta:
            raise DimensionMismatchError(f"theta has {len(theta)} entries, expected {self.n_theta}")
        W = self.X.copy()
        for t, block in zip(theta, self.A):
            W[:, : self.l] += t * block
        return replace(self, W=W, theta=theta)

    @property
    def Zi(self) -> np.ndarray:
        """[W~_i 0 ... 0]."""
        return self._first_block(self.Wi_tilde, 1.0)

    @property
    def Zj(self) -> np.ndarray:
        """[-W~_j 0 ... 0]."""
        return self._first_block(self.Wj_tilde, -1.0)

    def _first_block(self, block: ToeplitzBlock | None, sign: float) -> np.ndarray:
        out = np.zeros_like(self.X)
        if block is not None:
            out[:, : self.l] = sign * block.dense()
        return out


def toeplitz_delay(signal, cols: int, delay: int = 1, negate: bool = False) -> np.ndarray:
    """Column c (1-based) is the signal delayed by delay + c - 1 samples."""
    if delay < 1 or cols < 1:
        raise ValueError(f"delay and cols must be positive, got delay={delay} cols={cols}")
    x = np.asarray(signal, dtype=float)
    first = np.zeros(x.size)
    if delay < x.size:
        first[delay:] = x[: x.size - delay]
    if negate:
        first = -first
    return toeplitz(first, np.zeros(cols))


def selector_matrix(n_b: int, n_f: int, N: int) -> np.ndarray:
    """0/1 matrix mapping theta = [theta_B; theta_F] to g_ji = [b_ji; f_ji]."""
    if n_b > N or n_f > N:
        raise DimensionMismatchError(f"orders n_b={n_b}, n_f={n_f} exceed N={N}")
    M = np.zeros((2 * N, n_b + n_f))
    M[np.arange(n_b), np.arange(n_b)] = 1.0
    M[N + np.arange(n_f), n_b + np.arange(n_f)] = 1.0
    return M


def wji_dense(data: DataRecord, setup: MISOSetup) -> np.ndarray:
    """[W_i^N  -W_j^N], N x 2N."""
    N = data.N
    return np.hstack(
        [
            toeplitz_delay(data.node(setup.i), N, 1),
            toeplitz_delay(data.output(setup.j), N, 1, negate=True),
        ]
    )


def _check_nodes(data: DataRecord, N: int, nodes) -> None:
    if data.N != N:
        raise DimensionMismatchError(f"setup expects N={N} samples, data has {data.N}")
    bad = [k for k in nodes if not 1 <= k <= data.L]
    if bad:
        raise DimensionMismatchError(f"nodes {bad} outside the {data.L} data columns")


def regressor_row(data: DataRecord, j: int, nodes, l: int) -> np.ndarray:
    """[W_j W_k ...] with W_j built from z_j."""
    blocks = [
        toeplitz_delay(data.output(j) if k == j else data.node(k), l, 1) for k in nodes
    ]
    return np.hstack(blocks)


def build_stacked(data: DataRecord, setup: MISOSetup, theta) -> StackedData:
    theta = tuple(float(t) for t in np.asarray(theta, dtype=float).ravel())
    if len(theta) != setup.n_theta:
        raise DimensionMismatchError(f"theta has {len(theta)} entries, expected {setup.n_theta}")
    _check_nodes(data, setup.N, [setup.j, setup.i, *setup.inputs])

    l = setup.l
    w_i = data.node(setup.i)
    z_j = data.output(setup.j)
    X = regressor_row(data, setup.j, setup.gp_nodes, l)

    A = tuple(
        [toeplitz_delay(w_i, l, 2 + s, negate=True) for s in range(setup.n_b)]
        + [toeplitz_delay(z_j, l, 2 + s) for s in range(setup.n_f)]
    )
    Phi = np.hstack(
        [
            toeplitz_delay(w_i, setup.n_b, 1) if setup.n_b else np.zeros((data.N, 0)),
            toeplitz_delay(z_j, setup.n_f, 1, negate=True) if setup.n_f else np.zeros((data.N, 0)),
        ]
    )

    staged = StackedData(
        y=z_j,
        X=X,
        W=X,
        Phi=Phi,
        A=A,
        theta=(0.0,) * setup.n_theta,
        nodes=tuple(setup.gp_nodes),
        l=l,
        Wi_tilde=ToeplitzBlock(w_i, l, 2, negate=True),
        Wj_tilde=ToeplitzBlock(z_j, l, 2, negate=True),
        n_b=setup.n_b,
    )
    return staged.with_theta(theta)


def build_stacked_nonparam(data: DataRecord, setup: NonparamSetup) -> StackedData:
    """W = [W_j W_k ...] over all of N_j, no parametric part."""
    _check_nodes(data, setup.N, [setup.j, *setup.inputs])
    X = regressor_row(data, setup.j, setup.gp_nodes, setup.l)
    return StackedData(
        y=data.output(setup.j),
        X=X,
        W=X,
        Phi=np.zeros((data.N, 0)),
        A=(),
        theta=(),
        nodes=tuple(setup.gp_nodes),
        l=setup.l,
    )
