"""Pydantic models for type safety."""

from __future__ import annotations

import math
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.config import settings


class Poly(BaseModel):
    """Polynomial in q^-1, ascending powers (index 0 = constant term)."""

    model_config = ConfigDict(frozen=True)

    coeffs: tuple[float, ...]

    @field_validator("coeffs")
    @classmethod
    def _finite(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not value:
            raise ValueError("polynomial needs at least one coefficient")
        if not all(math.isfinite(c) for c in value):
            raise ValueError("polynomial coefficients must be finite")
        return value

    @classmethod
    def of(cls, coeffs) -> "Poly":
        return cls(coeffs=tuple(float(c) for c in np.asarray(coeffs, dtype=float).ravel()))

    @classmethod
    def one(cls) -> "Poly":
        return cls(coeffs=(1.0,))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def monic(self) -> bool:
        return self.coeffs[0] == 1.0

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)


class RationalTF(BaseModel):
    """num(q^-1) / den(q^-1) with a monic denominator."""

    model_config = ConfigDict(frozen=True)

    num: Poly
    den: Poly

    @field_validator("den")
    @classmethod
    def _monic_den(cls, value: Poly) -> Poly:
        if not value.monic:
            raise ValueError("denominator must be monic (den[0] = 1)")
        return value

    @classmethod
    def from_coeffs(cls, num, den=(1.0,)) -> "RationalTF":
        return cls(num=Poly.of(num), den=Poly.of(den))

    @classmethod
    def unit(cls) -> "RationalTF":
        return cls(num=Poly.one(), den=Poly.one())

    @property
    def strictly_proper(self) -> bool:
        return self.num.coeffs[0] == 0.0

    @property
    def monic(self) -> bool:
        """Unit feedthrough (num[0] = den[0] = 1)."""
        return self.num.coeffs[0] == 1.0


class NoiseModel(BaseModel):
    """v_j = H_j e_j with e_j white of variance `variance`."""

    model_config = ConfigDict(frozen=True)

    H: RationalTF = Field(default_factory=RationalTF.unit)
    variance: float = Field(ge=0.0)


class NetworkModel(BaseModel):
    """w = G w + r + v on L nodes; node indices are 1-based."""

    model_config = ConfigDict(frozen=True)

    L: int = Field(ge=1)
    modules: dict[tuple[int, int], RationalTF] = {}  # (j, k) -> G_jk
    noise: dict[int, NoiseModel] = {}
    references: tuple[int, ...] = ()

    def inputs_of(self, j: int) -> list[int]:
        """N_j: nodes k with a module G_jk."""
        return sorted(k for (row, k) in self.modules if row == j)

    def module(self, j: int, k: int) -> RationalTF:
        return self.modules[(j, k)]

    def noise_of(self, j: int) -> NoiseModel:
        return self.noise.get(j, NoiseModel(variance=0.0))

    def with_noise_variance(self, j: int, variance: float) -> "NetworkModel":
        noise = dict(self.noise)
        noise[j] = self.noise_of(j).model_copy(update={"variance": variance})
        return self.model_copy(update={"noise": noise})


class MISOSetup(BaseModel):
    """Target G_ji with parametric orders and GP truncation length."""

    model_config = ConfigDict(frozen=True)

    j: int
    i: int
    inputs: tuple[int, ...] = ()  # N_j without i
    n_b: int = Field(ge=0)
    n_f: int = Field(ge=0)
    l: int = Field(default_factory=lambda: settings.KERNEL_LENGTH, ge=1)
    N: int = Field(ge=1)

    @model_validator(mode="after")
    def _consistent(self) -> "MISOSetup":
        if self.i in self.inputs:
            raise ValueError(f"target input {self.i} must not be listed in inputs")
        if self.j in self.inputs or self.j == self.i:
            raise ValueError(f"output node {self.j} must not be an input")
        if self.n_b + self.n_f < 1:
            raise ValueError("n_b + n_f must be at least 1")
        if len(set(self.inputs)) != len(self.inputs):
            raise ValueError("inputs must be distinct")
        return self

    @property
    def n_theta(self) -> int:
        return self.n_b + self.n_f

    @property
    def p(self) -> int:
        return len(self.inputs)

    @property
    def gp_nodes(self) -> list[int]:
        """Index set {j, k_1, ..., k_p} of the GP-modeled filters."""
        return [self.j, *self.inputs]


class NonparamSetup(BaseModel):
    """All MISO filters (target included) modeled as GPs."""

    model_config = ConfigDict(frozen=True)

    j: int
    inputs: tuple[int, ...]  # all of N_j
    target: Optional[int] = None
    l: int = Field(default_factory=lambda: settings.KERNEL_LENGTH, ge=1)
    N: int = Field(ge=1)

    @model_validator(mode="after")
    def _consistent(self) -> "NonparamSetup":
        if self.j in self.inputs:
            raise ValueError(f"output node {self.j} must not be an input")
        if self.target is not None and self.target not in self.inputs:
            raise ValueError(f"target {self.target} must be one of the inputs")
        return self

    @property
    def gp_nodes(self) -> list[int]:
        return [self.j, *self.inputs]


class Eta(BaseModel):
    """[theta, lambdas, betas, sigma2] indexed by {j, k_1, ..., k_p}."""

    model_config = ConfigDict(frozen=True)

    theta: tuple[float, ...] = ()
    lambdas: dict[int, float]
    betas: dict[int, float]
    sigma2: float = Field(gt=0.0)

    @model_validator(mode="after")
    def _ranges(self) -> "Eta":
        if list(self.lambdas) != list(self.betas):
            raise ValueError("lambdas and betas must share one index set")
        if any(v < 0 for v in self.lambdas.values()):
            raise ValueError("lambdas must be nonnegative")
        if any(not 0.0 <= v < 1.0 for v in self.betas.values()):
            raise ValueError("betas must lie in [0, 1)")
        return self

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [
                np.asarray(self.theta, dtype=float),
                np.fromiter(self.lambdas.values(), dtype=float),
                np.fromiter(self.betas.values(), dtype=float),
                [self.sigma2],
            ]
        )


class EMOptions(BaseModel):
    tolerance: float = Field(default_factory=lambda: settings.EM_TOLERANCE, gt=0.0)
    max_iterations: int = Field(default_factory=lambda: settings.EM_MAX_ITERATIONS, ge=1)
    norm: Literal["euclidean", "inf"] = Field(
        default_factory=lambda: settings.EM_NORM
    )
    init: Literal["default", "random"] = "default"
    seed: int = 0
    beta_min: float = Field(default_factory=lambda: settings.BETA_MIN)
    beta_max: float = Field(default_factory=lambda: settings.BETA_MAX)
    beta_grid_points: int = Field(default_factory=lambda: settings.BETA_GRID_POINTS, ge=3)
    arx_order: int = Field(default_factory=lambda: settings.INIT_ARX_ORDER, ge=1)
    init_sweeps: int = Field(default_factory=lambda: settings.INIT_SWEEPS, ge=0)


class IterationRecord(BaseModel):
    iteration: int
    eta: Eta
    nll: float
    relative_change: Optional[float] = None


class EMTrace(BaseModel):
    iterations: list[IterationRecord] = []
    termination: Literal["converged", "max_iterations"] = "max_iterations"

    @property
    def nll(self) -> list[float]:
        return [record.nll for record in self.iterations]


class IdentResult(BaseModel):
    setup: MISOSetup
    theta_hat: tuple[float, ...]
    eta_hat: Eta
    trace: EMTrace
    target_ir: tuple[float, ...]
    gp_irs: dict[int, tuple[float, ...]]  # posterior means keyed by node (j -> m_j)
    gp_ir_std: dict[int, tuple[float, ...]] = {}

    @property
    def target_tf(self) -> RationalTF:
        theta = self.theta_hat
        n_b = self.setup.n_b
        return RationalTF.from_coeffs((0.0, *theta[:n_b]), (1.0, *theta[n_b:]))


class NonparamResult(BaseModel):
    setup: NonparamSetup
    mj_hat: tuple[float, ...]  # lags 1..l
    mjk_hats: dict[int, tuple[float, ...]]  # lags 1..l
    eta_hat: Eta
    trace: EMTrace
    recovered_g: dict[int, tuple[float, ...]] = {}  # lag 0..n-1


class ModuleOrders(BaseModel):
    n_b: int = Field(ge=0)
    n_f: int = Field(ge=0)


class PemSpec(BaseModel):
    """Direct PEM (Box-Jenkins) model structure and optimizer options."""

    module_orders: dict[int, ModuleOrders] = {}  # k in N_j \ {i}
    n_c: int = Field(default=0, ge=0)
    n_d: int = Field(default=0, ge=0)
    max_iterations: int = Field(default_factory=lambda: settings.PEM_MAX_ITERATIONS, ge=1)
    gradient_tol: float = Field(default_factory=lambda: settings.PEM_GRADIENT_TOL, gt=0.0)
    multistart: int = Field(default_factory=lambda: settings.PEM_MULTISTART, ge=1)
    seed: int = 0
    workers: int = Field(default=1, ge=1)


class ModuleEstimate(BaseModel):
    b: tuple[float, ...]  # coefficients of q^-1 .. q^-n_b
    f: tuple[float, ...]  # coefficients of q^-1 .. q^-n_f


class PemResult(BaseModel):
    theta: tuple[float, ...]  # [b_ji, f_ji]
    modules: dict[int, ModuleEstimate]
    c: tuple[float, ...] = ()
    d: tuple[float, ...] = ()
    sigma2: float
    objective: float
    objective_trace: tuple[float, ...] = ()  # V at the start and after every accepted step
    gradient_norm: float
    converged: bool
    iterations: int
    starts_abandoned: int = 0
    best_start: int = 0


class RunOutcome(BaseModel):
    run: int
    seed: int
    method: str
    sigma3_squared: Optional[float] = None
    fit_impulse: Optional[float] = None
    fit_params: Optional[float] = None
    theta: Optional[tuple[float, ...]] = None
    sigma2: Optional[float] = None
    iterations: Optional[int] = None
    error: Optional[str] = None
    runtime_s: Optional[float] = None


class MethodSummary(BaseModel):
    method: str
    runs: int
    failures: int
    median_fit_impulse: Optional[float] = None
    median_fit_params: Optional[float] = None
    theta_mean: tuple[float, ...] = ()
    theta_std: tuple[float, ...] = ()
    sigma2_mean: Optional[float] = None


class NoiseTableRow(BaseModel):
    sigma3_squared: float
    dummy_variance: float
    mean_estimate: Optional[float]
    runs: int
    failures: int


Method = Literal["ebdm", "nonparam", "direct_pem"]


class MonteCarloOptions(BaseModel):
    case: Literal["case1", "case2"] = "case1"
    runs: int = Field(default=20, ge=1)
    samples: int = Field(default=500, ge=10)
    methods: list[Method] = ["ebdm"]
    kernel_length: int = Field(default_factory=lambda: settings.KERNEL_LENGTH, ge=1)
    fit_taps: int = Field(default_factory=lambda: settings.FIT_TAPS, ge=2)
    seed: int = 0
    workers: int = Field(default_factory=lambda: settings.MC_WORKERS, ge=1)
    sigma3_sweep: list[float] = []
    warmup: int = Field(default_factory=lambda: settings.WARMUP_SAMPLES, ge=0)
    em: EMOptions = Field(default_factory=EMOptions)
    pem: Optional[PemSpec] = None
    record_timing: bool = False


class MCSummary(BaseModel):
    options: MonteCarloOptions
    seeds: list[int]
    outcomes: list[RunOutcome]
    methods: dict[str, MethodSummary]
    noise_table: list[NoiseTableRow] = []
    runtime: Optional[dict[str, float]] = None


# ---------------------------------------------------------------------------
# File schemas


class ModuleEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    from_: int = Field(alias="from", ge=1)
    to: int = Field(ge=1)
    num: list[float]
    den: list[float]


class NoiseEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    node: int = Field(ge=1)
    num: list[float] = [1.0]
    den: list[float] = [1.0]
    variance: float = Field(ge=0.0)


class NetworkConfigFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    L: int = Field(ge=1)
    modules: list[ModuleEntry] = []
    noise: list[NoiseEntry] = []
    references: list[int] = []


class ResultFile(BaseModel):
    """Everything needed to reproduce a CLI run, plus its outputs."""

    command: str
    config: dict[str, Any]
    seed: Optional[int] = None
    data_path: Optional[str] = None
    data_sha256: Optional[str] = None
    result: dict[str, Any]
    fits: dict[str, float] = {}
    timing: Optional[dict[str, float]] = None
