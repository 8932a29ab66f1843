"""Error certificate for replacing dCSL by unitary evolution during the kick.

Works with the dimensionless state (m w x2/hbar, xp/hbar, p2/(hbar m w)),
whose dCSL generator is

    M = [[0, w, 0], [-2w, -B, 2w], [0, -w, -chi]]

with drive f = (m w alpha/hbar, 0, chi <p2>_as/(hbar m w)).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import expm

from .core import AtomSpecies, Dcsl, DomainError, GasMoments
from .csl import unitary_harmonic
from .dcsl import dcsl_harmonic_step, dcsl_rates, dimensionless_generator

NORM_SLACK = 1e-9
INDETERMINATE_BELOW = 1e-30


@dataclass(frozen=True)
class KickMatrix:
    matrix: np.ndarray
    drive: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))


@dataclass(frozen=True)
class KickErrorReport:
    eigenvalues: Tuple[complex, complex, complex]
    err_x2: float
    err_xp: float
    err_p2: float
    norm_bound_ok: bool
    # components whose reference change is too small to normalise by
    indeterminate: Tuple[bool, bool, bool] = (False, False, False)
    numerator: float = 0.0
    denominators: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def errors(self) -> Tuple[float, float, float]:
        return self.err_x2, self.err_xp, self.err_p2

    @property
    def max_error(self) -> float:
        vals = [e for e, bad in zip(self.errors, self.indeterminate) if not bad]
        return max(vals) if vals else math.nan


def kick_matrix(noise: Dcsl, species: AtomSpecies, omega: float) -> KickMatrix:
    M, f, _ = dimensionless_generator(dcsl_rates(noise, species), species, omega)
    return KickMatrix(M, f)


def _poly(z, a, b, c):
    return ((z + a) * z + b) * z + c


def _polish(z, a, b, c, iters=3):
    for _ in range(iters):
        d = (3 * z + 2 * a) * z + b
        if d == 0:
            break
        z = z - _poly(z, a, b, c) / d
    return z


def char_poly_roots(big_b: float, chi: float, omega: float) -> Tuple[complex, complex, complex]:
    """Roots of z^3 + (B+chi) z^2 + (B chi + 4 w^2) z + 2 chi w^2.

    Cardano/trigonometric solution of the depressed cubic, Newton-polished,
    with the complex pair recovered by deflation so the product of roots
    stays accurate when chi is tiny. Ordered real root first.
    """
    if not omega > 0:
        raise DomainError(f"omega must be positive, got {omega}")
    if big_b < 0 or chi < 0:
        raise DomainError("B and chi must be >= 0")
    a = big_b + chi
    b = big_b * chi + 4.0 * omega**2
    c = 2.0 * chi * omega**2
    shift = a / 3.0
    p = b - a * a / 3.0
    q = 2.0 * a**3 / 27.0 - a * b / 3.0 + c
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc > 0:
        s = math.sqrt(disc)
        big = math.copysign(abs(q) / 2.0 + s, -q)
        u = math.copysign(abs(big) ** (1.0 / 3.0), big)
        v = -p / (3.0 * u) if u != 0 else 0.0
        r = _polish(u + v - shift, a, b, c).real
        s_lin = a + r
        # quotient constant term: b + r s_lin cancels for large |r|, -c/r for tiny |r|
        t = b + r * s_lin if abs(r * s_lin) < 0.5 * abs(b) else -c / r
        root = cmath.sqrt(s_lin * s_lin - 4.0 * t)
        z2 = (-s_lin + root) / 2.0
        z3 = (-s_lin - root) / 2.0
        if z2.imag < z3.imag:
            z2, z3 = z3, z2
        return complex(r), complex(z2), complex(z3)
    # three real roots
    rad = 2.0 * math.sqrt(-p / 3.0)
    arg = 3.0 * q / (p * rad) if p != 0 else 0.0
    phi = math.acos(max(-1.0, min(1.0, arg)))
    roots = [_polish(rad * math.cos((phi - 2.0 * math.pi * j) / 3.0) - shift, a, b, c)
             for j in range(3)]
    roots.sort(key=abs)
    # the smallest root suffers cancellation; take it from the product instead
    if roots[1] * roots[2] != 0:
        roots[0] = -c / (roots[1] * roots[2])
    roots.sort(reverse=True)
    return tuple(complex(z) for z in roots)


def spectral_norm(A: np.ndarray) -> float:
    return float(np.linalg.svd(A, compute_uv=False)[0])


def matrix_exp_norm_check(big_b: float, chi: float, omega: float, t: float) -> Tuple[bool, float]:
    """Check ||exp(M t)|| <= ||exp(M~ t)|| <= 2 in the spectral norm.

    Returns (holds, ||exp(M t)||).
    """
    if not t >= 0:
        raise DomainError(f"t must be >= 0, got {t}")
    M = np.array([[0.0, omega, 0.0], [-2.0 * omega, -big_b, 2.0 * omega], [0.0, -omega, -chi]])
    Mt = M.copy()
    Mt[1, 1] = Mt[2, 2] = 0.0
    n = spectral_norm(expm(M * t))
    n_free = spectral_norm(expm(Mt * t))
    return (n <= n_free + NORM_SLACK and n_free <= 2.0 + NORM_SLACK), n


def kick_error_bounds(m0: GasMoments, noise: Dcsl, species: AtomSpecies,
                      omega: float, dt: float) -> KickErrorReport:
    """Upper bounds on the relative error of the unitary kick approximation.

    err_i = 2 dt (|x0| max(B, chi) + |f|) / |x~_i(dt) - x~_i(0)|, where x~
    is the unitary evolution of the dimensionless state.
    """
    if not omega > 0:
        raise DomainError(f"omega must be positive, got {omega}")
    if not dt >= 0:
        raise DomainError(f"dt must be >= 0, got {dt}")
    rates = dcsl_rates(noise, species)
    M, f, scale = dimensionless_generator(rates, species, omega)
    x0 = m0.second() * scale
    xt = np.array(unitary_harmonic(m0.x2, m0.xp_sym, m0.p2, species.mass, omega, dt)) * scale
    num = 2.0 * dt * (np.linalg.norm(x0) * max(rates.big_b, rates.chi) + np.linalg.norm(f))
    den = np.abs(xt - x0)
    bad = tuple(bool(d < INDETERMINATE_BELOW) for d in den)
    errs = [math.nan if flag else float(num / d) for d, flag in zip(den, bad)]
    ok, _ = matrix_exp_norm_check(rates.big_b, rates.chi, omega, dt)
    return KickErrorReport(
        eigenvalues=char_poly_roots(rates.big_b, rates.chi, omega),
        err_x2=errs[0], err_xp=errs[1], err_p2=errs[2],
        norm_bound_ok=ok, indeterminate=bad, numerator=float(num),
        denominators=tuple(float(d) for d in den),
    )


def actual_kick_error(m0: GasMoments, noise: Dcsl, species: AtomSpecies,
                      omega: float, dt: float) -> Tuple[float, float, float]:
    """Realised relative error |exact - unitary| / |x~(dt) - x~(0)| per component."""
    exact = dcsl_harmonic_step(m0, noise, species, omega, dt, mode="exact").second()
    qm = dcsl_harmonic_step(m0, noise, species, omega, dt, mode="analytic-qm").second()
    den = np.abs(qm - m0.second())
    return tuple(float(abs(e - q) / d) if d > 0 else math.nan
                 for e, q, d in zip(exact, qm, den))
