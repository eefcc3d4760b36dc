"""Fit metrics and the Monte Carlo harness over the built-in case studies."""

from __future__ import annotations

import concurrent.futures
import logging
import time

import numpy as np

from src.exceptions import ConstantTruthError, DimensionMismatchError, NetidentError, UnstablePredictorError
from src.models import (
    MCSummary,
    MethodSummary,
    MISOSetup,
    ModuleOrders,
    MonteCarloOptions,
    NetworkModel,
    NoiseTableRow,
    NonparamSetup,
    PemSpec,
    RationalTF,
    RunOutcome,
)
from src.services import baseline, ebdm, nonparam
from src.services import polynomial as poly
from src.services.network import CASE_TARGET, CASE_THETA, DataRecord, builtin_case, dummy_variance, simulate

log = logging.getLogger(__name__)


def _fit(x0, xhat) -> float:
    x0 = np.asarray(x0, dtype=float)
    xhat = np.asarray(xhat, dtype=float)
    if x0.shape != xhat.shape:
        raise DimensionMismatchError(f"fit needs equal lengths, got {x0.shape} and {xhat.shape}")
    spread = np.linalg.norm(x0 - x0.mean())
    if spread == 0.0:
        raise ConstantTruthError("fit is undefined for a constant reference")
    return float(1.0 - np.linalg.norm(x0 - xhat) / spread)


def fit_impulse(g0, ghat) -> float:
    """1 - ||g0 - ghat|| / ||g0 - mean(g0)||."""
    return _fit(g0, ghat)


def fit_params(theta0, thetahat) -> float:
    return _fit(theta0, thetahat)


# ---------------------------------------------------------------------------
# Monte Carlo


def draw_seeds(master_seed: int, runs: int) -> list[int]:
    """Pairwise distinct run seeds."""
    rng = np.random.default_rng(master_seed)
    return [int(s) for s in rng.choice(2**31, size=runs, replace=False)]


def default_pem_spec(net: NetworkModel, j: int, i: int, seed: int) -> PemSpec:
    """True model orders for every module and the noise model at node j."""
    orders = {
        k: ModuleOrders(n_b=net.module(j, k).num.degree, n_f=net.module(j, k).den.degree)
        for k in net.inputs_of(j)
        if k != i
    }
    H = net.noise_of(j).H
    return PemSpec(module_orders=orders, n_c=H.num.degree, n_d=H.den.degree, seed=seed)


def _ebdm_outcome(data: DataRecord, net, options: MonteCarloOptions, g0, theta0, seed: int) -> dict:
    j, i = CASE_TARGET
    G = net.module(j, i)
    setup = MISOSetup(
        j=j,
        i=i,
        inputs=tuple(k for k in net.inputs_of(j) if k != i),
        n_b=G.num.degree,
        n_f=G.den.degree,
        l=options.kernel_length,
        N=data.N,
    )
    em = options.em.model_copy(update={"seed": seed})
    result = ebdm.identify(data, setup, em)
    ghat = poly.impulse_response(result.target_tf, options.fit_taps)
    return {
        "fit_impulse": fit_impulse(g0, ghat),
        "fit_params": fit_params(theta0, result.theta_hat),
        "theta": result.theta_hat,
        "sigma2": result.eta_hat.sigma2,
        "iterations": len(result.trace.iterations) - 1,
    }


def _nonparam_outcome(data: DataRecord, net, options: MonteCarloOptions, g0, theta0, seed: int) -> dict:
    j, i = CASE_TARGET
    setup = NonparamSetup(
        j=j, inputs=tuple(net.inputs_of(j)), target=i, l=options.kernel_length, N=data.N
    )
    em = options.em.model_copy(update={"seed": seed})
    result = nonparam.identify_nonparametric(data, setup, em)
    ghat = nonparam.recover_module_ir(result, i, options.fit_taps)
    return {
        "fit_impulse": fit_impulse(g0, ghat),
        "sigma2": result.eta_hat.sigma2,
        "iterations": len(result.trace.iterations) - 1,
    }


def _pem_outcome(data: DataRecord, net, options: MonteCarloOptions, g0, theta0, seed: int) -> dict:
    j, i = CASE_TARGET
    unstable = [k for k in net.inputs_of(j) if not poly.is_stable(net.module(j, k).den)]
    if unstable:
        raise UnstablePredictorError(f"direct PEM needs stable modules, G_{j}k unstable for k={unstable}")
    G = net.module(j, i)
    setup = MISOSetup(
        j=j,
        i=i,
        inputs=tuple(k for k in net.inputs_of(j) if k != i),
        n_b=G.num.degree,
        n_f=G.den.degree,
        N=data.N,
    )
    spec = options.pem or default_pem_spec(net, j, i, seed)
    result = baseline.direct_pem(data, setup, spec)
    n_b = setup.n_b
    tf = RationalTF.from_coeffs([0.0, *result.theta[:n_b]], [1.0, *result.theta[n_b:]])
    return {
        "fit_impulse": fit_impulse(g0, poly.impulse_response(tf, options.fit_taps)),
        "fit_params": fit_params(theta0, result.theta),
        "theta": result.theta,
        "sigma2": result.sigma2,
        "iterations": result.iterations,
    }


METHODS = {"ebdm": _ebdm_outcome, "nonparam": _nonparam_outcome, "direct_pem": _pem_outcome}


def _run_one(task, options: MonteCarloOptions, base: NetworkModel) -> list[RunOutcome]:
    run, seed, sigma3 = task
    net = base if sigma3 is None else base.with_noise_variance(CASE_TARGET[0], sigma3)
    theta0 = CASE_THETA[options.case]
    g0 = poly.impulse_response(net.module(*CASE_TARGET), options.fit_taps)
    outcomes = []
    try:
        data = simulate(net, options.samples, seed, warmup=options.warmup)
    except NetidentError as e:
        log.warning(f"MC run {run} (seed={seed}) simulation failed: {e}")
        return [
            RunOutcome(run=run, seed=seed, method=m, sigma3_squared=sigma3, error=str(e))
            for m in options.methods
        ]

    for method in options.methods:
        started = time.perf_counter()
        try:
            fields = METHODS[method](data, net, options, g0, theta0, seed)
            error = None
        except (NetidentError, np.linalg.LinAlgError) as e:
            fields, error = {}, f"{type(e).__name__}: {e}"
            log.warning(f"MC run {run} (seed={seed}) {method} failed: {error}")
        elapsed = time.perf_counter() - started
        outcome = RunOutcome(
            run=run,
            seed=seed,
            method=method,
            sigma3_squared=sigma3,
            error=error,
            runtime_s=elapsed if options.record_timing else None,
            **fields,
        )
        if error is None:
            log.info(
                f"MC run {run} seed={seed} {method}: fit_impulse={outcome.fit_impulse:.4f} "
                f"sigma2={outcome.sigma2:.4f}"
            )
        outcomes.append(outcome)
    return outcomes


def _median(values) -> float | None:
    values = [v for v in values if v is not None]
    return float(np.median(values)) if values else None


def summarize_method(method: str, outcomes: list[RunOutcome]) -> MethodSummary:
    """Medians and parameter statistics over successful runs; failures counted."""
    mine = [o for o in outcomes if o.method == method]
    ok = [o for o in mine if o.error is None]
    thetas = np.array([o.theta for o in ok if o.theta is not None])
    sigmas = [o.sigma2 for o in ok if o.sigma2 is not None]
    return MethodSummary(
        method=method,
        runs=len(mine),
        failures=len(mine) - len(ok),
        median_fit_impulse=_median(o.fit_impulse for o in ok),
        median_fit_params=_median(o.fit_params for o in ok),
        theta_mean=tuple(thetas.mean(axis=0)) if thetas.size else (),
        theta_std=tuple(thetas.std(axis=0)) if thetas.size else (),
        sigma2_mean=float(np.mean(sigmas)) if sigmas else None,
    )


def noise_table(outcomes: list[RunOutcome], base: NetworkModel, sweep: list[float]) -> list[NoiseTableRow]:
    """Mean estimated noise variance against sigma_3^2 and the dummy variance."""
    j = CASE_TARGET[0]
    rows = []
    for sigma3 in sweep:
        mine = [o for o in outcomes if o.method == "ebdm" and o.sigma3_squared == sigma3]
        ok = [o.sigma2 for o in mine if o.error is None and o.sigma2 is not None]
        rows.append(
            NoiseTableRow(
                sigma3_squared=sigma3,
                dummy_variance=dummy_variance(base.with_noise_variance(j, sigma3), j),
                mean_estimate=float(np.mean(ok)) if ok else None,
                runs=len(mine),
                failures=len(mine) - len(ok),
            )
        )
    return rows


def run_montecarlo(options: MonteCarloOptions) -> MCSummary:
    """Simulate fresh data per run and identify G_31 with every requested method."""
    base = builtin_case(options.case)
    seeds = draw_seeds(options.seed, options.runs)
    sweep = options.sigma3_sweep or [None]
    tasks = [(run, seed, s) for s in sweep for run, seed in enumerate(seeds)]
    log.info(
        f"Monte Carlo: case={options.case} runs={options.runs} N={options.samples} "
        f"methods={options.methods} sweep={options.sigma3_sweep or 'none'} workers={options.workers}"
    )

    started = time.perf_counter()
    if options.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=options.workers) as executor:
            batches = list(executor.map(lambda t: _run_one(t, options, base), tasks))
    else:
        batches = [_run_one(t, options, base) for t in tasks]
    outcomes = [o for batch in batches for o in batch]
    total = time.perf_counter() - started

    methods = {m: summarize_method(m, outcomes) for m in options.methods}
    for m, s in methods.items():
        log.info(
            f"Summary {m}: runs={s.runs} failures={s.failures} "
            f"median_fit_impulse={s.median_fit_impulse} median_fit_params={s.median_fit_params}"
        )
    runtime = None
    if options.record_timing:
        runtime = {"total_s": total, "mean_task_s": total / max(len(tasks), 1)}
    return MCSummary(
        options=options,
        seeds=seeds,
        outcomes=outcomes,
        methods=methods,
        noise_table=noise_table(outcomes, base, options.sigma3_sweep) if options.sigma3_sweep else [],
        runtime=runtime,
    )

