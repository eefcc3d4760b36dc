#!/usr/bin/env python3
"""netident - local module identification in dynamic networks.

Usage:
    python -m src.main simulate --case case1 --samples 500 --seed 1 --out data/case1.csv
    python -m src.main identify --data data/case1.csv --target 1:3 --inputs 2,4 \\
        --orders nb=2,nf=2 --out data/result.json
    python -m src.main identify-np --data data/case1.csv --target 1:3 --inputs 2,4
    python -m src.main baseline --data data/case1.csv --target 1:3 --inputs 2,4 \\
        --orders nb=2,nf=2 --module-orders 2:nb=1,nf=1 --module-orders 4:nb=4,nf=4
    python -m src.main montecarlo --case case1 --runs 20 --methods ebdm --out data/summary.json
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from pydantic import ValidationError

from src.config import settings
from src.exceptions import NetidentError
from src.models import (
    EMOptions,
    MISOSetup,
    ModuleOrders,
    MonteCarloOptions,
    NonparamSetup,
    PemSpec,
    RationalTF,
    ResultFile,
)
from src.services import baseline, ebdm, metrics, nonparam
from src.services.data_store import (
    JsonStore,
    file_sha256,
    parse_network_config,
    read_data_csv,
    write_data_csv,
)
from src.services.network import CASES, builtin_case, simulate
from src.services.polynomial import impulse_response

logging.basicConfig(level=settings.LOG_LEVEL, format="%(levelname)s: %(message)s")
log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Argument types


def _target(text: str) -> tuple[int, int]:
    """'i:j' -> (i, j): input node i, output node j."""
    try:
        i, j = (int(part) for part in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"target must look like 'i:j', got {text!r}") from None
    return i, j


def _node_list(text: str) -> tuple[int, ...]:
    if not text.strip():
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated node indices, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _orders(text: str, keys: tuple[str, str] = ("nb", "nf")) -> dict[str, int]:
    try:
        pairs = dict(item.split("=") for item in text.split(","))
        orders = {key: int(pairs.pop(key)) for key in keys}
    except (ValueError, KeyError):
        raise argparse.ArgumentTypeError(
            f"expected '{keys[0]}=..,{keys[1]}=..', got {text!r}"
        ) from None
    if pairs:
        raise argparse.ArgumentTypeError(f"unknown order keys {sorted(pairs)}")
    return orders


def _noise_orders(text: str) -> dict[str, int]:
    return _orders(text, ("nc", "nd"))


def _module_orders(text: str) -> tuple[int, dict[str, int]]:
    """'k:nb=..,nf=..'."""
    node, _, rest = text.partition(":")
    try:
        return int(node), _orders(rest)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'k:nb=..,nf=..', got {text!r}") from None


def _methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    unknown = sorted(set(methods) - set(metrics.METHODS))
    if unknown or not methods:
        raise argparse.ArgumentTypeError(f"methods must be a subset of {sorted(metrics.METHODS)}")
    return methods


# ---------------------------------------------------------------------------
# Commands


def _em_options(args: argparse.Namespace) -> EMOptions:
    return EMOptions(
        tolerance=args.tol,
        max_iterations=args.max_iter,
        norm=args.norm,
        init=args.init,
        seed=args.seed,
    )


def _config_echo(args: argparse.Namespace) -> dict:
    skip = {"func", "out", "record_timing"}
    return {
        key: (list(value) if isinstance(value, tuple) else value)
        for key, value in sorted(vars(args).items())
        if key not in skip
    }


def _write_result(args, command: str, result, fits=None, started=None, data_path=None, seed=None) -> None:
    document = ResultFile(
        command=command,
        config=_config_echo(args),
        seed=seed,
        data_path=str(data_path) if data_path else None,
        data_sha256=file_sha256(data_path) if data_path else None,
        result=result.model_dump(mode="json"),
        fits=fits or {},
        timing={"elapsed_s": time.perf_counter() - started} if args.record_timing and started else None,
    )
    path = JsonStore(args.out).save(document)
    log.info(f"Saved {command} result to {path}")


def _truth_fits(args, j: int, i: int, theta=None, ir=None) -> dict[str, float]:
    """Fits against a truth network when --network is given."""
    if not args.network:
        return {}
    truth = parse_network_config(args.network).module(j, i)
    fits = {}
    if ir is not None:
        fits["fit_impulse"] = metrics.fit_impulse(impulse_response(truth, len(ir)), ir)
    if theta is not None:
        theta0 = truth.num.coeffs[1:] + truth.den.coeffs[1:]
        if len(theta0) == len(theta):
            fits["fit_params"] = metrics.fit_params(theta0, theta)
    return fits


def cmd_simulate(args: argparse.Namespace) -> int:
    net = parse_network_config(args.network) if args.network else builtin_case(args.case)
    record = simulate(net, args.samples, args.seed, warmup=args.warmup)
    path = write_data_csv(record, args.out)
    log.info(f"Simulated {record.N} samples on {record.L} nodes (seed={args.seed}) -> {path}")
    return 0


def cmd_identify(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    data = read_data_csv(args.data)
    i, j = args.target
    setup = MISOSetup(
        j=j,
        i=i,
        inputs=args.inputs,
        n_b=args.orders["nb"],
        n_f=args.orders["nf"],
        l=args.kernel_length,
        N=data.N,
    )
    result = ebdm.identify(data, setup, _em_options(args))
    log.info(f"theta_hat = {[round(t, 6) for t in result.theta_hat]}, sigma2 = {result.eta_hat.sigma2:.6f}")
    fits = _truth_fits(args, j, i, theta=result.theta_hat, ir=result.target_ir)
    _write_result(args, "identify", result, fits, started, args.data, data.seed)
    return 0


def cmd_identify_np(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    data = read_data_csv(args.data)
    i, j = args.target
    setup = NonparamSetup(j=j, inputs=(i, *args.inputs), target=i, l=args.kernel_length, N=data.N)
    result = nonparam.identify_nonparametric(data, setup, _em_options(args))
    fits = _truth_fits(args, j, i, ir=result.recovered_g[i])
    _write_result(args, "identify-np", result, fits, started, args.data, data.seed)
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    data = read_data_csv(args.data)
    i, j = args.target
    setup = MISOSetup(
        j=j, i=i, inputs=args.inputs, n_b=args.orders["nb"], n_f=args.orders["nf"], N=data.N
    )
    spec = PemSpec(
        module_orders={k: ModuleOrders(n_b=o["nb"], n_f=o["nf"]) for k, o in args.module_orders or []},
        n_c=args.noise_orders["nc"],
        n_d=args.noise_orders["nd"],
        multistart=args.multistart,
        seed=args.seed,
    )
    result = baseline.direct_pem(data, setup, spec)
    tf = RationalTF.from_coeffs(
        (0.0, *result.theta[: setup.n_b]), (1.0, *result.theta[setup.n_b :])
    )
    fits = _truth_fits(args, j, i, theta=result.theta, ir=impulse_response(tf, settings.FIT_TAPS))
    _write_result(args, "baseline", result, fits, started, args.data, data.seed)
    return 0


def cmd_montecarlo(args: argparse.Namespace) -> int:
    options = MonteCarloOptions(
        case=args.case,
        runs=args.runs,
        samples=args.samples,
        methods=args.methods,
        kernel_length=args.kernel_length,
        fit_taps=args.fit_taps,
        seed=args.seed,
        workers=args.workers,
        sigma3_sweep=args.sigma3_sweep,
        warmup=args.warmup,
        em=EMOptions(tolerance=args.tol, max_iterations=args.max_iter, norm=args.norm),
        record_timing=args.record_timing,
    )
    summary = metrics.run_montecarlo(options)
    path = JsonStore(args.out).save(summary)
    log.info(f"Saved Monte Carlo summary to {path}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_em_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tol", type=float, default=settings.EM_TOLERANCE, help="Relative eta change to stop EM")
    parser.add_argument("--max-iter", type=int, default=settings.EM_MAX_ITERATIONS)
    parser.add_argument("--norm", choices=["euclidean", "inf"], default=settings.EM_NORM)


def _add_miso_flags(parser: argparse.ArgumentParser, orders: bool = True) -> None:
    parser.add_argument("--data", required=True, help="Node data CSV")
    parser.add_argument("--target", type=_target, required=True, help="i:j for module G_ji")
    parser.add_argument("--inputs", type=_node_list, default=(), help="Other inputs of node j, e.g. 2,4")
    if orders:
        parser.add_argument("--orders", type=_orders, required=True, help="nb=..,nf=..")
    parser.add_argument("--network", default=None, help="Truth network JSON for fit metrics")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=str(Path(settings.DATA_DIR) / "result.json"))
    parser.add_argument("--record-timing", action="store_true", help="Store wall-clock timing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netident", description="Local module identification in dynamic networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Simulate a network to CSV")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--network", help="Network JSON")
    source.add_argument("--case", choices=sorted(CASES))
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--warmup", type=int, default=settings.WARMUP_SAMPLES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    for name, func, orders in [
        ("identify", cmd_identify, True),
        ("identify-np", cmd_identify_np, False),
    ]:
        p = sub.add_parser(name, help=f"{name} on a data CSV")
        _add_miso_flags(p, orders)
        p.add_argument("--kernel-length", type=int, default=settings.KERNEL_LENGTH)
        p.add_argument("--init", choices=["default", "random"], default="default")
        _add_em_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("baseline", help="Direct prediction-error method")
    _add_miso_flags(p)
    p.add_argument("--module-orders", type=_module_orders, action="append", help="k:nb=..,nf=.. per other input")
    p.add_argument("--noise-orders", type=_noise_orders, default={"nc": 0, "nd": 0}, help="nc=..,nd=..")
    p.add_argument("--multistart", type=int, default=settings.PEM_MULTISTART)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("montecarlo", help="Monte Carlo study on a built-in case")
    p.add_argument("--case", choices=sorted(CASES), default="case1")
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--methods", type=_methods, default=["ebdm"])
    p.add_argument("--kernel-length", type=int, default=settings.KERNEL_LENGTH)
    p.add_argument("--fit-taps", type=int, default=settings.FIT_TAPS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=settings.MC_WORKERS)
    p.add_argument("--sigma3-sweep", type=_float_list, default=[])
    p.add_argument("--warmup", type=int, default=settings.WARMUP_SAMPLES)
    p.add_argument("--out", default=str(Path(settings.DATA_DIR) / "summary.json"))
    p.add_argument("--record-timing", action="store_true")
    _add_em_flags(p)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def execute(argv: list[str] | None = None) -> int:
    """Run one subcommand; 0 on success, 1 on runtime errors, 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(map(str, err['loc'])) or 'setup'}: {err['msg']}" for err in e.errors())
        log.error(f"{args.command}: invalid arguments: {problems}")
        return 2
    except (NetidentError, OSError, ValueError) as e:
        message = " ".join(str(e).split())
        log.error(f"{args.command}: {type(e).__name__}: {message}")
        return 1


def main():
    sys.exit(execute(sys.argv[1:]))


if __name__ == "__main__":
    main()
