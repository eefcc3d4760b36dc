"""Non-parametric variant: every MISO filter, the target included, is a GP."""

from __future__ import annotations

import logging

import numpy as np
from scipy import signal

from src.exceptions import NearZeroLeadingDenominatorError
from src.models import EMOptions, NonparamResult, NonparamSetup, Poly
from src.services import ebdm
from src.services.network import DataRecord
from src.services.polynomial import evaluate
from src.services.regression import build_stacked_nonparam

log = logging.getLogger(__name__)

LEADING_TOL = 1e-12


def series_divide(num, den, n: int) -> np.ndarray:
    """First n coefficients of the power series num / den."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    if abs(den[0]) < LEADING_TOL:
        raise NearZeroLeadingDenominatorError(f"leading coefficient {den[0]:.3e} is (near) zero")
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return signal.lfilter(num, den, impulse)


def _as_series(taps) -> np.ndarray:
    """Lags 1..l to a power series with a zero constant term."""
    return np.concatenate([[0.0], np.asarray(taps, dtype=float)])


def recover_module_ir(result: NonparamResult, k: int, n: int) -> np.ndarray:
    """Impulse response of G_jk = M_jk / (1 - M_j), lags 0..n-1."""
    m_k = _as_series(result.mjk_hats[k])
    one_minus_mj = -_as_series(result.mj_hat)
    one_minus_mj[0] = 1.0
    return series_divide(m_k, one_minus_mj, n)


def recover_module_frequency(result: NonparamResult, k: int, omega) -> np.ndarray:
    """M_jk(e^{iw}) / (1 - M_j(e^{iw})), usable when G_jk is unstable."""
    m_k = evaluate(Poly.of(_as_series(result.mjk_hats[k])), omega)
    m_j = evaluate(Poly.of(_as_series(result.mj_hat)), omega)
    return m_k / (1.0 - m_j)


def identify_nonparametric(
    data: DataRecord, setup: NonparamSetup, opts: EMOptions | None = None
) -> NonparamResult:
    opts = opts or EMOptions()
    stacked = build_stacked_nonparam(data, setup)
    log.info(f"Non-parametric identification at node {setup.j}: inputs={list(setup.inputs)} l={setup.l}")

    eta, post, trace = ebdm.run_em(lambda _: stacked, ebdm.initial_eta(stacked, opts), opts, theta_step=False)

    taps = post.split(post.m_hat)
    result = NonparamResult(
        setup=setup,
        mj_hat=tuple(taps[0]),
        mjk_hats={k: tuple(m) for k, m in zip(setup.inputs, taps[1:])},
        eta_hat=eta,
        trace=trace,
    )
    recovered = {k: tuple(recover_module_ir(result, k, setup.l)) for k in setup.inputs}
    return result.model_copy(update={"recovered_g": recovered})
