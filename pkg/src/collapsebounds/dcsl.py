"""Dissipative CSL moment evolution and boosted-noise mean motion.

Moment equations:

    d<x2>/dt = <xp>/m + alpha
    d<xp>/dt = 2<p2>/m - 2 m w^2 <x2> - B <xp>
    d<p2>/dt = -m w^2 <xp> - chi <p2> + chi <p2>_as

Free flight is solved exactly. The triangular system reduces to iterated
convolutions of exponentials, evaluated as divided differences of exp via a
small matrix exponential, which stays accurate when rates coincide or vanish.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .core import HBAR, AtomSpecies, Dcsl, DomainError, GasMoments, dcsl_k
from .csl import harmonic_means, unitary_harmonic

HARMONIC_MODES = ("analytic-qm", "numeric", "exact")
NUMERIC_MAX_STEP = 1e-4


class UnboundedVelocityError(DomainError):
    """The boost leaves no trace because the damping rate B vanishes."""


@dataclass(frozen=True)
class DcslRates:
    k: float
    chi: float
    big_b: float
    alpha: float
    p2_as: float
    # chi * p2_as, computed without forming the k -> 0 limit of p2_as
    heating: float


def dcsl_rates(noise: Dcsl, species: AtomSpecies) -> DcslRates:
    A2 = species.nucleon_count**2
    k = dcsl_k(noise.t_csl, species, noise.r_c)
    lam, r_c = noise.lam, noise.r_c
    chi = 4.0 * k * lam * A2 / (1.0 + k) ** 5
    return DcslRates(
        k=k,
        chi=chi,
        big_b=2.0 * lam * A2 * k / (1.0 + k) ** 4,
        alpha=6.0 * lam * A2 * r_c**2 * k**2 / (1.0 + k) ** 3,
        p2_as=3.0 * HBAR**2 / (8.0 * k * r_c**2),
        heating=1.5 * lam * A2 * HBAR**2 / (r_c**2 * (1.0 + k) ** 5),
    )


def exp_convolution(rates: Sequence[float], t: float) -> float:
    """n-fold convolution of exp(-a_i s) over [0, t].

    Equals t^(n-1) times the divided difference of exp at the points
    -a_i t, read off the corner of the exponential of a bidiagonal matrix.
    """
    n = len(rates)
    if t == 0.0:
        return 1.0 if n == 1 else 0.0
    T = np.diag([-a * t for a in rates]) + np.diag(np.ones(n - 1), 1)
    return t ** (n - 1) * expm(T)[0, n - 1]


def _decay_integral(rate: float, t: float) -> float:
    """(1 - exp(-rate t)) / rate, equal to t at rate = 0."""
    if rate == 0.0:
        return t
    return -math.expm1(-rate * t) / rate


def _free_means(m0: GasMoments, rates: DcslRates, u, mass: float, dt: float):
    B = rates.big_b
    decay = math.exp(-B * dt)
    frac = _decay_integral(B, dt)
    x = tuple(x0 + ui * dt + (p0 / mass - ui) * frac
              for x0, p0, ui in zip(m0.x_mean, m0.p_mean, u))
    p = tuple(p0 * decay - mass * ui * math.expm1(-B * dt) for p0, ui in zip(m0.p_mean, u))
    return x, p


def dcsl_free_step(m0: GasMoments, noise: Dcsl, species: AtomSpecies, dt: float) -> GasMoments:
    """Exact free flight; means relax toward the noise drift m u at rate B."""
    if not dt >= 0:
        raise DomainError(f"step duration must be >= 0, got {dt}")
    r = dcsl_rates(noise, species)
    m = species.mass
    chi, B, H = r.chi, r.big_b, r.heating
    D = exp_convolution
    p0, xp0 = m0.p2, m0.xp_sym
    p2 = p0 * D([chi], dt) + H * D([chi, 0.0], dt)
    xp = xp0 * D([B], dt) + (2.0 / m) * (p0 * D([B, chi], dt) + H * D([B, chi, 0.0], dt))
    x2 = (m0.x2 + r.alpha * dt
          + (xp0 * D([0.0, B], dt)
             + (2.0 / m) * (p0 * D([0.0, B, chi], dt) + H * D([0.0, B, chi, 0.0], dt))) / m)
    x_mean, p_mean = _free_means(m0, r, noise.boost, m, dt)
    return GasMoments(x2=x2, xp_sym=xp, p2=p2, x_mean=x_mean, p_mean=p_mean)


def boost_mean_step(m0: GasMoments, noise: Dcsl, species: AtomSpecies, dt: float) -> GasMoments:
    """Free flight under boosted noise: means drift toward velocity u.

    <p>_t = <p>_0 e^(-Bt) + m u (1 - e^(-Bt)),
    <x>_t = <x>_0 + u t + (<p>_0/m - u)(1 - e^(-Bt))/B.
    Second moments follow :func:`dcsl_free_step`.
    """
    return dcsl_free_step(m0, noise, species, dt)


def printed_free_step(m0: GasMoments, noise: Dcsl, species: AtomSpecies, dt: float) -> GasMoments:
    """Free-flight solutions in their published form.

    The p2 expression is exact. The xp_sym expression does not solve the
    stated equations and is kept only as a reference fixture; x2 uses the
    published form, which is correct.
    """
    r = dcsl_rates(noise, species)
    m = species.mass
    chi, B, pas = r.chi, r.big_b, r.p2_as
    p0, xp0 = m0.p2, m0.xp_sym
    eB, eC = math.exp(-B * dt), math.exp(-chi * dt)
    p2 = pas + eC * (p0 - pas)
    xp = (2 * (p0 - pas) / (m * (B - chi)) * (eC - eB) + 2 * m * pas / (m * B)
          + eB * (xp0 - 8 * m * pas / B))
    x2 = (m0.x2 + 2 * (p0 - pas) / (m**2 * (B - chi)) * ((1 - eC) / chi - (1 - eB) / B)
          + (xp0 - 2 * pas / (m * B)) * (1 - eB) / (m * B)
          + (r.alpha + 2 * pas / (m**2 * B)) * dt)
    return m0.with_second(x2=x2, xp_sym=xp, p2=p2)


def dimensionless_generator(rates: DcslRates, species: AtomSpecies, omega: float):
    """Matrix M and drive f for (m w x2/hbar, xp/hbar, p2/(hbar m w))."""
    m = species.mass
    M = np.array([
        [0.0, omega, 0.0],
        [-2.0 * omega, -rates.big_b, 2.0 * omega],
        [0.0, -omega, -rates.chi],
    ])
    f = np.array([m * omega * rates.alpha / HBAR, 0.0, rates.heating / (HBAR * m * omega)])
    scale = np.array([m * omega / HBAR, 1.0 / HBAR, 1.0 / (HBAR * m * omega)])
    return M, f, scale


def _exact_harmonic(m0: GasMoments, r: DcslRates, species: AtomSpecies,
                    omega: float, dt: float) -> np.ndarray:
    M, f, scale = dimensionless_generator(r, species, omega)
    aug = np.zeros((4, 4))
    aug[:3, :3] = M * dt
    aug[:3, 3] = f * dt
    E = expm(aug)
    y = m0.second() * scale
    return (E[:3, :3] @ y + E[:3, 3]) / scale


def dcsl_harmonic_step(m0: GasMoments, noise: Dcsl, species: AtomSpecies, omega: float,
                       dt: float, mode: str = "analytic-qm",
                       step: Optional[float] = None) -> GasMoments:
    """Harmonic-trap stage.

    ``analytic-qm`` ignores the noise during the kick; ``numeric`` integrates
    the full equations with RK4 (step at most 1e-4 s); ``exact`` uses the
    matrix exponential of the linear system. Means follow the classical
    harmonic motion in every mode.
    """
    if not omega > 0:
        raise DomainError(f"harmonic step needs omega > 0, got {omega}")
    if not dt >= 0:
        raise DomainError(f"step duration must be >= 0, got {dt}")
    m = species.mass
    if mode == "analytic-qm":
        y = unitary_harmonic(m0.x2, m0.xp_sym, m0.p2, m, omega, dt)
    elif mode == "numeric":
        from .oracle import dcsl_system, rk4_array
        h = NUMERIC_MAX_STEP if step is None else min(step, NUMERIC_MAX_STEP)
        sys_ = dcsl_system(noise.lam, noise.r_c, noise.t_csl, species, omega)
        y = rk4_array(sys_, m0.second(), dt, h)
    elif mode == "exact":
        y = _exact_harmonic(m0, dcsl_rates(noise, species), species, omega, dt)
    else:
        raise ValueError(f"unknown harmonic mode {mode!r}; expected one of {HARMONIC_MODES}")
    x_mean, p_mean = harmonic_means(m0.x_mean, m0.p_mean, m, omega, dt)
    return GasMoments(x2=y[0], xp_sym=y[1], p2=y[2], x_mean=x_mean, p_mean=p_mean)


def boost_velocity_bound(noise: Dcsl, species: AtomSpecies, t_total: float,
                         displacement_limit: float) -> float:
    """Largest drift speed keeping (1/2) u B t^2 below the displacement limit."""
    if not t_total > 0 or not displacement_limit > 0:
        raise DomainError("t_total and displacement_limit must be positive")
    B = dcsl_rates(noise, species).big_b
    if B == 0.0:
        raise UnboundedVelocityError("B = 0: the boost has no effect and u is unbounded")
    if B * t_total >= 0.1:
        warnings.warn(f"B t = {B * t_total:.3g} is not small; the quadratic bound is inaccurate",
                      RuntimeWarning, stacklevel=2)
    return 2.0 * displacement_limit / (B * t_total**2)
