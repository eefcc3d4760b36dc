"""Direct prediction-error method with a Box-Jenkins predictor.

    eps = (D/C) (z_j - sum_k B_k/F_k w_k)

B_k, F_k are parameterized independently per input (the target included),
C, D are the monic noise-model polynomials. The criterion (1/N) sum eps^2 is
minimized by Levenberg-Marquardt damped Gauss-Newton on the analytic
sensitivity filters, from several starting points.
"""

from __future__ import annotations

import concurrent.futures
import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal

from src.exceptions import DimensionMismatchError, UnstablePredictorError
from src.models import MISOSetup, ModuleEstimate, ModuleOrders, PemResult, PemSpec, Poly
from src.services import polynomial as poly
from src.services.network import DataRecord

log = logging.getLogger(__name__)

MU_INIT = 1e-3
MU_MAX = 1e10


@dataclass(frozen=True)
class _Layout:
    """Slices of the parameter vector, target first."""

    nodes: tuple[int, ...]
    orders: tuple[ModuleOrders, ...]
    n_c: int
    n_d: int

    @property
    def size(self) -> int:
        return sum(o.n_b + o.n_f for o in self.orders) + self.n_c + self.n_d

    def unpack(self, p: np.ndarray):
        modules = []
        pos = 0
        for o in self.orders:
            b = p[pos : pos + o.n_b]
            f = p[pos + o.n_b : pos + o.n_b + o.n_f]
            modules.append((np.concatenate([[0.0], b]), np.concatenate([[1.0], f])))
            pos += o.n_b + o.n_f
        c = np.concatenate([[1.0], p[pos : pos + self.n_c]])
        d = np.concatenate([[1.0], p[pos + self.n_c : pos + self.n_c + self.n_d]])
        return modules, c, d


def _layout(setup: MISOSetup, spec: PemSpec) -> _Layout:
    missing = [k for k in setup.inputs if k not in spec.module_orders]
    if missing:
        raise DimensionMismatchError(f"no PEM orders given for inputs {missing}")
    orders = (ModuleOrders(n_b=setup.n_b, n_f=setup.n_f),) + tuple(
        spec.module_orders[k] for k in setup.inputs
    )
    return _Layout(nodes=(setup.i, *setup.inputs), orders=orders, n_c=spec.n_c, n_d=spec.n_d)


def _shift(x: np.ndarray, s: int) -> np.ndarray:
    out = np.zeros_like(x)
    out[s:] = x[: x.size - s]
    return out


def _check_stable(modules, c) -> None:
    for b, f in modules:
        if poly.max_root_modulus(Poly.of(f)) >= 1.0:
            raise UnstablePredictorError(f"module denominator {list(f)} is not stable")
    if poly.max_root_modulus(Poly.of(c)) >= 1.0:
        raise UnstablePredictorError(f"noise numerator {list(c)} is not minimum phase")


def _errors(p: np.ndarray, layout: _Layout, z: np.ndarray, inputs: list[np.ndarray]):
    modules, c, d = layout.unpack(p)
    _check_stable(modules, c)
    outputs = [signal.lfilter(b, f, w) for (b, f), w in zip(modules, inputs)]
    s = z - np.sum(outputs, axis=0) if outputs else z.copy()
    return signal.lfilter(d, c, s), s, outputs


def _jacobian(p: np.ndarray, layout: _Layout, z, inputs) -> tuple[np.ndarray, np.ndarray]:
    eps, s, outputs = _errors(p, layout, z, inputs)
    modules, c, d = layout.unpack(p)
    cols = []
    for (b, f), o, w, y in zip(modules, layout.orders, inputs, outputs):
        u_b = signal.lfilter(d, c, signal.lfilter([1.0], f, w))
        u_f = signal.lfilter(d, c, signal.lfilter([1.0], f, y))
        cols += [-_shift(u_b, k) for k in range(1, o.n_b + 1)]
        cols += [_shift(u_f, k) for k in range(1, o.n_f + 1)]
    eps_c = signal.lfilter([1.0], c, eps)
    s_c = signal.lfilter([1.0], c, s)
    cols += [-_shift(eps_c, k) for k in range(1, layout.n_c + 1)]
    cols += [_shift(s_c, k) for k in range(1, layout.n_d + 1)]
    return eps, np.column_stack(cols)


def _levenberg_marquardt(p, layout, z, inputs, spec: PemSpec):
    N = z.size
    eps, J = _jacobian(p, layout, z, inputs)
    V = float(eps @ eps) / N
    mu = MU_INIT
    grad = 2.0 * J.T @ eps / N
    trace = [V]
    it = 0
    for it in range(1, spec.max_iterations + 1):
        if np.linalg.norm(grad) < spec.gradient_tol:
            break
        H = J.T @ J
        accepted = False
        while mu < MU_MAX:
            step = np.linalg.solve(H + mu * np.diag(np.diag(H) + 1e-12), -J.T @ eps)
            trial = p + step
            try:
                eps_t, _, _ = _errors(trial, layout, z, inputs)
            except UnstablePredictorError:
                mu *= 10.0
                continue
            V_t = float(eps_t @ eps_t) / N
            if V_t <= V:
                p, accepted = trial, True
                mu = max(mu / 10.0, 1e-12)
                break
            mu *= 10.0
        if not accepted:
            break
        eps, J = _jacobian(p, layout, z, inputs)
        V = float(eps @ eps) / N
        grad = 2.0 * J.T @ eps / N
        trace.append(V)
    grad_norm = float(np.linalg.norm(grad))
    return p, V, grad_norm, it, tuple(trace)


def _initial_point(layout: _Layout, z: np.ndarray, inputs, rng: np.random.Generator | None):
    """FIR least squares for the numerators; stable random denominators for restarts."""
    blocks = [
        np.column_stack([_shift(w, k) for k in range(1, o.n_b + 1)])
        for o, w in zip(layout.orders, inputs)
        if o.n_b
    ]
    b_ls = np.linalg.lstsq(np.hstack(blocks), z, rcond=None)[0] if blocks else np.zeros(0)

    p, pos = [], 0
    for o in layout.orders:
        b = b_ls[pos : pos + o.n_b]
        pos += o.n_b
        f = np.zeros(o.n_f)
        if rng is not None:
            b = b + rng.normal(0.0, 0.1, o.n_b)
            if o.n_f:
                f = poly.stabilize(Poly.of([1.0, *rng.normal(0.0, 0.5, o.n_f)])).array[1:]
        p += [b, f]
    c = np.zeros(layout.n_c)
    d = np.zeros(layout.n_d)
    if rng is not None:
        if layout.n_c:
            c = poly.stabilize(Poly.of([1.0, *rng.normal(0.0, 0.3, layout.n_c)])).array[1:]
        if layout.n_d:
            d = poly.stabilize(Poly.of([1.0, *rng.normal(0.0, 0.3, layout.n_d)])).array[1:]
    return np.concatenate([*p, c, d])


def _run_start(start: int, layout, z, inputs, spec: PemSpec):
    rng = None if start == 0 else np.random.default_rng([spec.seed, start])
    p0 = _initial_point(layout, z, inputs, rng)
    _errors(p0, layout, z, inputs)
    return _levenberg_marquardt(p0, layout, z, inputs, spec)


def direct_pem(data: DataRecord, setup: MISOSetup, spec: PemSpec | None = None) -> PemResult:
    """Best local minimizer of the prediction-error criterion over `multistart` starts."""
    spec = spec or PemSpec()
    if data.N != setup.N:
        raise DimensionMismatchError(f"setup expects N={setup.N} samples, data has {data.N}")
    layout = _layout(setup, spec)
    z = data.output(setup.j)
    inputs = [data.node(k) for k in layout.nodes]

    def run(start: int):
        try:
            return start, _run_start(start, layout, z, inputs, spec)
        except (UnstablePredictorError, np.linalg.LinAlgError) as e:
            log.warning(f"PEM start {start} abandoned: {e}")
            return start, None

    starts = range(spec.multistart)
    if spec.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=spec.workers) as executor:
            outcomes = list(executor.map(run, starts))
    else:
        outcomes = [run(s) for s in starts]

    finished = [(s, out) for s, out in outcomes if out is not None]
    if not finished:
        raise UnstablePredictorError(f"all {spec.multistart} PEM starts were abandoned")
    best_start, (p, V, grad_norm, iterations, trace) = min(finished, key=lambda item: item[1][1])

    modules, c, d = layout.unpack(p)
    b_i, f_i = modules[0]
    log.info(f"PEM: V={V:.6f} |grad|={grad_norm:.2e} start={best_start} iterations={iterations}")
    return PemResult(
        theta=tuple(b_i[1:]) + tuple(f_i[1:]),
        modules={
            k: ModuleEstimate(b=tuple(b[1:]), f=tuple(f[1:]))
            for k, (b, f) in zip(setup.inputs, modules[1:])
        },
        c=tuple(c[1:]),
        d=tuple(d[1:]),
        sigma2=V,
        objective=V,
        objective_trace=trace,
        gradient_norm=grad_norm,
        converged=grad_norm < spec.gradient_tol,
        iterations=iterations,
        starts_abandoned=spec.multistart - len(finished),
        best_start=best_start,
    )


def prediction_errors(data: DataRecord, setup: MISOSetup, spec: PemSpec, result: PemResult) -> np.ndarray:
    """One-step-ahead prediction errors of a fitted model."""
    layout = _layout(setup, spec)
    p = np.concatenate(
        [
            np.asarray(result.theta),
            *[np.concatenate([result.modules[k].b, result.modules[k].f]) for k in setup.inputs],
            result.c,
            result.d,
        ]
    )
    eps, _, _ = _errors(p, layout, data.output(setup.j), [data.node(k) for k in layout.nodes])
    return eps

