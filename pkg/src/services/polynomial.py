"""Polynomial and transfer-function algebra in the delay operator q^-1.

Coefficients are stored in ascending powers of q^-1, so ``p.coeffs[0]`` is
the constant term. Read as descending powers of z, the same array is the
z-domain polynomial z^n p(z^-1), which is what the root routines work on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal

from src.config import settings
from src.exceptions import (
    DegeneratePolynomialError,
    PoleOnUnitCircleError,
    RootOnUnitCircleError,
    ZeroTrailingCoefficientError,
)
from src.models import Poly, RationalTF

log = logging.getLogger(__name__)

IMAG_RESIDUE_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-9


@dataclass(frozen=True)
class StabilityFactorization:
    """p = stable * antistable, with the mirrored anti-stable factor."""

    stable: Poly
    antistable: Poly
    mirror: Poly
    allpass_gain: float  # 1 / |f^(a)_n|

    @property
    def trailing(self) -> float:
        """Highest-lag coefficient of the anti-stable factor (1 when trivial)."""
        return self.antistable.coeffs[-1]


def multiply(a: Poly, b: Poly) -> Poly:
    return Poly.of(np.convolve(a.array, b.array))


def product(polys) -> Poly:
    out = Poly.one()
    for p in polys:
        out = multiply(out, p)
    return out


def subtract(a: Poly, b: Poly) -> Poly:
    """Coefficient-wise a - b, padding the shorter one with zeros."""
    n = max(len(a.coeffs), len(b.coeffs))
    diff = np.zeros(n)
    diff[: len(a.coeffs)] += a.array
    diff[: len(b.coeffs)] -= b.array
    return Poly.of(diff)


def roots(p: Poly) -> np.ndarray:
    """z-domain roots via companion-matrix eigenvalues."""
    coeffs = p.array
    if not np.any(coeffs):
        raise DegeneratePolynomialError("all-zero polynomial has no roots")
    if p.degree < 1:
        raise DegeneratePolynomialError("degree-0 polynomial has no roots")
    return np.roots(coeffs)  # leading zeros only drop roots at infinity


def max_root_modulus(p: Poly) -> float:
    """Largest |root|, 0 for a constant polynomial."""
    if p.degree < 1 or not np.any(p.array[1:]):
        return 0.0
    zs = roots(p)
    return float(np.max(np.abs(zs))) if zs.size else 0.0


def is_stable(p: Poly) -> bool:
    return max_root_modulus(p) < 1.0


def from_roots(zs) -> Poly:
    """Real monic polynomial with the given (conjugate-closed) roots."""
    zs = np.asarray(zs, dtype=complex)
    if zs.size == 0:
        return Poly.one()
    coeffs = np.poly(zs)
    if np.iscomplexobj(coeffs):
        residue = float(np.max(np.abs(coeffs.imag)))
        if residue > IMAG_RESIDUE_TOL * max(1.0, float(np.max(np.abs(coeffs)))):
            raise DegeneratePolynomialError(
                f"roots are not closed under conjugation (imaginary residue {residue:.2e})"
            )
        coeffs = coeffs.real
    return Poly.of(coeffs)


def mirror_antistable(fa: Poly) -> Poly:
    """F*(q) = 1 + (f_{n-1}/f_n) q^-1 + ... + (1/f_n) q^-n."""
    if not fa.monic:
        raise DegeneratePolynomialError("mirror needs a monic polynomial")
    trailing = fa.coeffs[-1]
    if trailing == 0.0:
        raise ZeroTrailingCoefficientError(
            f"highest-lag coefficient of {list(fa.coeffs)} is zero"
        )
    return Poly.of(fa.array[::-1] / trailing)


def factor_stability(p: Poly, tol: float | None = None) -> StabilityFactorization:
    """Split a monic polynomial into its stable and anti-stable factors."""
    tol = settings.UNIT_CIRCLE_TOL if tol is None else tol
    if not p.monic:
        raise DegeneratePolynomialError("stability factorization needs a monic polynomial")
    one = Poly.one()
    if max_root_modulus(p) == 0.0:
        return StabilityFactorization(stable=p, antistable=one, mirror=one, allpass_gain=1.0)

    zs = roots(p)
    moduli = np.abs(zs)
    on_circle = np.abs(moduli - 1.0) < tol
    if np.any(on_circle):
        raise RootOnUnitCircleError(
            f"root(s) {zs[on_circle]} within {tol:g} of the unit circle"
        )
    stable = from_roots(zs[moduli < 1.0])
    antistable = from_roots(zs[moduli > 1.0])

    rebuilt = multiply(stable, antistable).array
    scale = max(1.0, float(np.max(np.abs(p.array))))
    if rebuilt.shape != p.array.shape or np.max(np.abs(rebuilt - p.array)) > RECONSTRUCTION_TOL * scale:
        raise DegeneratePolynomialError(
            f"stable/anti-stable split does not reproduce {list(p.coeffs)}"
        )

    if antistable.degree == 0:
        return StabilityFactorization(stable=stable, antistable=one, mirror=one, allpass_gain=1.0)
    mirror = mirror_antistable(antistable)
    return StabilityFactorization(
        stable=stable,
        antistable=antistable,
        mirror=mirror,
        allpass_gain=1.0 / abs(antistable.coeffs[-1]),
    )


def stabilize(p: Poly) -> Poly:
    """Reflect roots on/outside the unit circle to 1/conj(z)."""
    if max_root_modulus(p) == 0.0:
        return p
    zs = roots(p)
    moduli = np.abs(zs)
    outside = moduli >= 1.0
    if not np.any(outside):
        return p
    zs = zs.copy()
    zs[outside] = 1.0 / np.conj(zs[outside])
    zs[np.abs(zs) >= 1.0] *= 0.99
    return from_roots(zs)


def impulse_response(g: RationalTF, n: int) -> np.ndarray:
    """First n coefficients of the power-series expansion of num/den."""
    if n < 1:
        raise ValueError("impulse response length must be at least 1")
    impulse = np.zeros(n)
    impulse[0] = 1.0
    return signal.lfilter(g.num.array, g.den.array, impulse)


def filter_signal(g: RationalTF, x: np.ndarray) -> np.ndarray:
    """Causal time-domain filtering with zero initial conditions."""
    return signal.lfilter(g.num.array, g.den.array, np.asarray(x, dtype=float))


def evaluate(p: Poly, omega) -> np.ndarray | complex:
    """p(e^{-i omega}) for scalar or array omega."""
    z_inv = np.exp(-1j * np.asarray(omega, dtype=float))
    return np.polyval(p.array[::-1], z_inv)


def freq_response(g: RationalTF, omega, tol: float | None = None):
    """num(e^{-i omega}) / den(e^{-i omega})."""
    tol = settings.UNIT_CIRCLE_TOL if tol is None else tol
    den = evaluate(g.den, omega)
    if np.any(np.abs(den) < tol):
        raise PoleOnUnitCircleError(
            f"denominator {list(g.den.coeffs)} vanishes on the frequency grid"
        )
    return evaluate(g.num, omega) / den
