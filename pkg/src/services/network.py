"""Dynamic network model: validation, simulation and predictor-filter truth."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from src.config import settings
from src.exceptions import (
    InvalidDataError,
    InvalidNetworkError,
    NetworkValidationError,
    PoleOnUnitCircleError,
    UnknownCaseError,
    UnstablePredictorError,
)
from src.models import NetworkModel, NoiseModel, Poly, RationalTF
from src.services import polynomial as poly

log = logging.getLogger(__name__)

NOISE_STREAM = 0
REFERENCE_STREAM = 1
WELL_POSED_TOL = 1e-8


@dataclass(frozen=True)
class DataRecord:
    """N samples of node signals w and references r (columns are nodes 1..L)."""

    w: np.ndarray
    r: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.w.ndim != 2 or self.w.shape != self.r.shape:
            raise InvalidDataError(
                f"w {self.w.shape} and r {self.r.shape} must be equal N x L matrices"
            )
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.r))):
            raise InvalidDataError("node data contains non-finite samples")

    @property
    def N(self) -> int:
        return self.w.shape[0]

    @property
    def L(self) -> int:
        return self.w.shape[1]

    def node(self, k: int) -> np.ndarray:
        return self.w[:, k - 1]

    def reference(self, k: int) -> np.ndarray:
        return self.r[:, k - 1]

    def output(self, j: int) -> np.ndarray:
        """z_j = w_j - r_j."""
        return self.w[:, j - 1] - self.r[:, j - 1]


@dataclass(frozen=True)
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    spectral_radius: float = 0.0

    @property
    def valid(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class TruthPredictorFilters:
    """Predictor filters of the all-pass rewritten node equation for target G_ji."""

    Mj: RationalTF
    Mjk: dict[int, RationalTF]
    dummy_variance: float
    Fbar_ji: Poly
    B_ji: Poly
    allpass_gain: float = 1.0


# ---------------------------------------------------------------------------
# State-space form of the closed loop


def _module_ss(g: RationalTF):
    n = max(len(g.num.coeffs), len(g.den.coeffs))
    num = np.zeros(n)
    den = np.zeros(n)
    num[: len(g.num.coeffs)] = g.num.array
    den[: len(g.den.coeffs)] = g.den.array
    # tf2ss reads positive powers of z; a shorter numerator is the strictly proper delay
    num = np.trim_zeros(num, "f")
    return signal.tf2ss(num if num.size else np.zeros(1), den)


def closed_loop_ss(net: NetworkModel):
    """(A + BC, B, C, I) realizing w = (I - G)^-1 u for u = r + v."""
    blocks = []
    for (j, k), g in sorted(net.modules.items()):
        a, b, c, _ = _module_ss(g)
        if a.shape[0]:
            blocks.append((j, k, a, b, c))
    n_states = sum(a.shape[0] for _, _, a, _, _ in blocks)
    A = np.zeros((n_states, n_states))
    B = np.zeros((n_states, net.L))
    C = np.zeros((net.L, n_states))
    offset = 0
    for j, k, a, b, c in blocks:
        size = a.shape[0]
        span = slice(offset, offset + size)
        A[span, span] = a
        B[span, k - 1] = b[:, 0]
        C[j - 1, span] = c[0]
        offset += size
    return A + B @ C, B, C, np.eye(net.L)


def closed_loop_spectral_radius(net: NetworkModel) -> float:
    A, _, _, _ = closed_loop_ss(net)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def _module_matrix(net: NetworkModel, omega: np.ndarray) -> np.ndarray:
    G = np.zeros((omega.size, net.L, net.L), dtype=complex)
    for (j, k), g in net.modules.items():
        G[:, j - 1, k - 1] = poly.freq_response(g, omega)
    return G


# ---------------------------------------------------------------------------
# Validation


def validate(net: NetworkModel) -> ValidationReport:
    """Collect every structural and stability violation of the network."""
    violations: list[str] = []
    nodes = range(1, net.L + 1)

    for (j, k), g in sorted(net.modules.items()):
        if j not in nodes or k not in nodes:
            violations.append(f"module G_{j}{k} references a node outside 1..{net.L}")
            continue
        if j == k:
            violations.append(f"diagonal module present: G_{j}{j}")
        if not g.strictly_proper:
            violations.append(f"module G_{j}{k} not strictly proper")

    for j, noise in sorted(net.noise.items()):
        if j not in nodes:
            violations.append(f"noise model for node {j} outside 1..{net.L}")
            continue
        if not noise.H.monic:
            violations.append(f"noise model H_{j} not monic")
            continue
        if not poly.is_stable(noise.H.den):
            violations.append(f"noise model H_{j} not stable")
        if not poly.is_stable(noise.H.num):
            violations.append(f"noise model H_{j} not minimum phase")

    for j in net.references:
        if j not in nodes:
            violations.append(f"reference at node {j} outside 1..{net.L}")

    if violations:
        return ValidationReport(violations=violations)

    radius = closed_loop_spectral_radius(net)
    if radius >= 1.0:
        violations.append(f"closed loop unstable (spectral radius {radius:.4f})")

    omega = np.linspace(0.0, np.pi, settings.STABILITY_GRID)
    try:
        G = _module_matrix(net, omega)
        det = np.abs(np.linalg.det(np.eye(net.L)[None, :, :] - G))
        if np.min(det) < WELL_POSED_TOL:
            violations.append("network not well posed: det(I - G) vanishes on the unit circle")
    except PoleOnUnitCircleError as e:
        violations.append(f"module pole on the unit circle: {e}")

    return ValidationReport(violations=violations, spectral_radius=radius)


# ---------------------------------------------------------------------------
# Simulation


def _stream(seed: int, node: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, node, stream])))


def simulate_noise(
    net: NetworkModel, N: int, seed: int, warmup: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Innovations e and process noise v = H e, warm-up samples included."""
    warmup = settings.WARMUP_SAMPLES if warmup is None else warmup
    total = N + warmup
    e = np.zeros((total, net.L))
    v = np.zeros((total, net.L))
    for j in range(1, net.L + 1):
        noise = net.noise_of(j)
        if noise.variance == 0.0:
            continue
        e[:, j - 1] = _stream(seed, j, NOISE_STREAM).normal(0.0, np.sqrt(noise.variance), total)
        v[:, j - 1] = poly.filter_signal(noise.H, e[:, j - 1])
    return e, v


def _references(
    net: NetworkModel, N: int, seed: int, warmup: int, r_spec
) -> np.ndarray:
    total = N + warmup
    r = np.zeros((total, net.L))
    if r_spec == "none":
        return r
    if r_spec == "white":
        for j in net.references:
            r[:, j - 1] = _stream(seed, j, REFERENCE_STREAM).standard_normal(total)
        return r
    if isinstance(r_spec, Mapping):
        for j, values in r_spec.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (N,):
                raise InvalidDataError(f"reference for node {j} must have {N} samples")
            r[warmup:, j - 1] = values
        return r
    raise InvalidDataError(f"unknown reference spec {r_spec!r}")


def simulate(
    net: NetworkModel,
    N: int,
    seed: int,
    r_spec: str | Mapping[int, np.ndarray] = "white",
    warmup: int | None = None,
) -> DataRecord:
    """Simulate w = G w + r + v; the first `warmup` samples are discarded."""
    report = validate(net)
    if not report.valid:
        raise NetworkValidationError(report.violations)
    warmup = settings.WARMUP_SAMPLES if warmup is None else warmup

    r = _references(net, N, seed, warmup, r_spec)
    _, v = simulate_noise(net, N, seed, warmup)
    u = r + v

    A, B, C, D = closed_loop_ss(net)
    if A.size == 0:
        w = u
    else:
        _, w, _ = signal.dlsim((A, B, C, D, 1), u)
    w = np.asarray(w, dtype=float).reshape(u.shape)
    if not np.all(np.isfinite(w)):
        raise InvalidNetworkError("simulation diverged")

    log.debug(f"Simulated L={net.L} N={N} seed={seed} warmup={warmup}")
    return DataRecord(w=w[warmup:].copy(), r=r[warmup:].copy(), seed=seed)


# ---------------------------------------------------------------------------
# Predictor filters of the rewritten node equation


def _antistable_product(net: NetworkModel, j: int):
    factors = {k: poly.factor_stability(net.module(j, k).den) for k in net.inputs_of(j)}
    fa = poly.product(f.antistable for f in factors.values())
    return factors, fa


def dummy_variance(net: NetworkModel, j: int) -> float:
    """|f_{a,n}|^2 sigma_j^2, the output noise power after the all-pass rewrite."""
    _, fa = _antistable_product(net, j)
    return fa.coeffs[-1] ** 2 * net.noise_of(j).variance


def truth_predictor_filters(net: NetworkModel, j: int, i: int) -> TruthPredictorFilters:
    """M_j and M_jk for target G_ji, stable even when some G_jk are unstable."""
    inputs = net.inputs_of(j)
    if i not in inputs:
        raise InvalidNetworkError(f"G_{j}{i} is not a module of the network")

    factors, fa = _antistable_product(net, j)
    fa_mirror = poly.mirror_antistable(fa) if fa.degree > 0 else Poly.one()
    trailing = fa.coeffs[-1]
    H = net.noise_of(j).H

    def antistable_except(k: int) -> Poly:
        return poly.product(f.antistable for m, f in factors.items() if m != k)

    # 1 - M_j = D prod_{k != i} F^(a)_k / (C F_a* F^(s)_i)
    one_minus_num = poly.multiply(H.den, antistable_except(i))
    one_minus_den = poly.product([H.num, fa_mirror, factors[i].stable])
    Mj = RationalTF(num=poly.subtract(one_minus_den, one_minus_num), den=one_minus_den)

    Mjk: dict[int, RationalTF] = {}
    for k in inputs:
        if k == i:
            continue
        num = poly.product([H.den, antistable_except(k), net.module(j, k).num])
        den = poly.product([H.num, fa_mirror, factors[k].stable])
        Mjk[k] = RationalTF(num=num, den=den)

    for name, tf in [("M_j", Mj), *((f"M_{j}{k}", tf) for k, tf in Mjk.items())]:
        if not poly.is_stable(tf.den):
            raise UnstablePredictorError(f"predictor filter {name} is unstable")

    G_ji = net.module(j, i)
    Fbar = poly.subtract(G_ji.den, Poly.one())
    return TruthPredictorFilters(
        Mj=Mj,
        Mjk=Mjk,
        dummy_variance=trailing**2 * net.noise_of(j).variance,
        Fbar_ji=Fbar,
        B_ji=G_ji.num,
        allpass_gain=1.0 / abs(trailing),
    )


# ---------------------------------------------------------------------------
# Built-in case-study networks


def _tf(num, den) -> RationalTF:
    return RationalTF.from_coeffs(num, den)


def _case1() -> NetworkModel:
    modules = {
        (3, 1): _tf([0, 1, 0.05], [1, 1, 0.6]),
        (3, 2): _tf([0, 0.09], [1, 0.5]),
        (3, 4): _tf([0, 1.184, -0.647, 0.151, -0.082], [1, -0.8, 0.279, -0.048, 0.01]),
        (1, 4): _tf([0, 0.4, -0.5], [1, 0.3]),
        (2, 1): _tf([0, 0.4, -0.5], [1, 0.3]),
        (1, 2): _tf([0, 0.4, 0.5], [1, 0.3]),
        (2, 3): _tf([0, 0.4, 0.5], [1, 0.3]),
    }
    noise = {
        1: NoiseModel(H=_tf([1], [1, 0.2]), variance=0.05),
        2: NoiseModel(H=_tf([1], [1, 0.3]), variance=0.08),
        3: NoiseModel(
            H=_tf([1, -0.505, 0.155, -0.01], [1, -0.729, 0.236, -0.019]), variance=0.5
        ),
        4: NoiseModel(H=RationalTF.unit(), variance=0.1),
    }
    return NetworkModel(L=4, modules=modules, noise=noise, references=(2, 4))


def _case2() -> NetworkModel:
    base = _case1()
    modules = dict(base.modules)
    modules[(3, 1)] = _tf([0, 1, 0.05], [1, 1.7, 1.073])
    modules[(3, 2)] = _tf(
        [0, -0.7339, -0.1256, 0.04023, 0.011], [1, -1.089, -0.104, 0.052, 0.011]
    )
    return base.model_copy(update={"modules": modules}).with_noise_variance(3, 0.1)


CASES = {"case1": _case1, "case2": _case2}

# Target G_31 and its true parameters [b1, b2, f1, f2] per case.
CASE_TARGET = (3, 1)
CASE_THETA = {"case1": (1.0, 0.05, 1.0, 0.6), "case2": (1.0, 0.05, 1.7, 1.073)}


def builtin_case(name: str) -> NetworkModel:
    try:
        return CASES[name]()
    except KeyError:
        raise UnknownCaseError(f"unknown case {name!r}; expected one of {sorted(CASES)}") from None
