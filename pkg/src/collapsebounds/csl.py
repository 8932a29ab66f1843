"""White-noise CSL moment evolution.

Per-stage solutions of

    d<x2>/dt = <xp>/m
    d<xp>/dt = 2<p2>/m - 2 m w^2 <x2>
    d<p2>/dt = h - m w^2 <xp>

with the heating rate h = 3 lambda A^2 hbar^2 / (2 r_C^2). The harmonic step
is written in a form that stays accurate as w -> 0, so it agrees with the
free step in that limit without catastrophic cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

from .core import HBAR, AtomSpecies, Csl, DomainError, GasMoments, Protocol, heating_rate


@dataclass(frozen=True)
class HarmonicStepCoefficients:
    a_w: float
    b_w: float
    c_w: float


@dataclass(frozen=True)
class ClosedFormCoefficients:
    a_qm: float
    b_qm: float
    c_qm: float
    a_csl: float
    b_csl: float
    c_csl: float


def harmonic_coefficients(m0: GasMoments, noise: Csl, species: AtomSpecies,
                          omega: float) -> HarmonicStepCoefficients:
    """Integration constants of the harmonic solution."""
    m = species.mass
    c_w = heating_rate(noise.lam, noise.r_c, species) / (2.0 * m * omega**2)
    return HarmonicStepCoefficients(
        a_w=m * omega * m0.x2 - m0.p2 / (m * omega),
        b_w=m0.xp_sym - c_w,
        c_w=c_w,
    )


def _check_dt(dt):
    if not dt >= 0:
        raise DomainError(f"step duration must be >= 0, got {dt}")


def _s3(x: float) -> float:
    """(x - sin x) / x^3, accurate near zero."""
    if abs(x) < 0.5:
        x2 = x * x
        # alternating series sum_k (-1)^k x^(2k) / (2k+3)!
        term, total, k = 1.0 / 6.0, 0.0, 0
        while True:
            total += term
            k += 1
            term *= -x2 / ((2 * k + 2) * (2 * k + 3))
            if abs(term) < 1e-18 * abs(total):
                return total + term
    return (x - math.sin(x)) / x**3


def _sinc_t(omega: float, t: float) -> float:
    """sin(omega t) / omega, tending to t as omega -> 0."""
    th = omega * t
    if abs(th) < 1e-4:
        return t * (1.0 - th * th / 6.0)
    return math.sin(th) / omega


def csl_free_step(m0: GasMoments, noise: Csl, species: AtomSpecies, dt: float) -> GasMoments:
    """Free flight under CSL heating; means move ballistically."""
    _check_dt(dt)
    m = species.mass
    h = heating_rate(noise.lam, noise.r_c, species)
    x2 = m0.x2 + m0.xp_sym * dt / m + m0.p2 * dt**2 / m**2 + h * dt**3 / (3.0 * m**2)
    xp = m0.xp_sym + 2.0 * m0.p2 * dt / m + h * dt**2 / m
    p2 = m0.p2 + h * dt
    x_mean = tuple(x + p * dt / m for x, p in zip(m0.x_mean, m0.p_mean))
    return GasMoments(x2=x2, p2=p2, xp_sym=xp, x_mean=x_mean, p_mean=m0.p_mean)


def unitary_harmonic(x2, xp, p2, m, omega, t) -> Tuple[float, float, float]:
    """lambda = 0 harmonic evolution of the second moments."""
    c = math.cos(omega * t)
    s = _sinc_t(omega, t)
    w2 = omega * omega
    return (
        x2 * c * c + xp * c * s / m + p2 * s * s / m**2,
        xp * (c * c - w2 * s * s) + 2.0 * c * s * (p2 / m - m * w2 * x2),
        p2 * c * c - m * w2 * xp * c * s + m**2 * w2 * w2 * x2 * s * s,
    )


def csl_heating_harmonic(h: float, m: float, omega: float, t: float) -> Tuple[float, float, float]:
    """Moments accumulated from zero by heating in a harmonic trap."""
    s = _sinc_t(omega, t)
    x2 = 2.0 * h * t**3 * _s3(2.0 * omega * t) / m**2
    xp = h * s * s / m
    p2 = 0.5 * h * (t + s * math.cos(omega * t))
    return x2, xp, p2


def harmonic_means(x_mean, p_mean, m, omega, t):
    c = math.cos(omega * t)
    s = _sinc_t(omega, t)
    x = tuple(x * c + p * s / m for x, p in zip(x_mean, p_mean))
    p = tuple(p * c - m * omega**2 * x0 * s for x0, p in zip(x_mean, p_mean))
    return x, p


def csl_harmonic_step(m0: GasMoments, noise: Csl, species: AtomSpecies,
                      omega: float, dt: float) -> GasMoments:
    """Exact harmonic-trap evolution under CSL heating.

    Algebraically identical to the solution expressed through the
    coefficients of :func:`harmonic_coefficients`; the secular term of p2
    is m w^2 C_w t.
    """
    if not omega > 0:
        raise DomainError(f"harmonic step needs omega > 0, got {omega}; use csl_free_step")
    _check_dt(dt)
    m = species.mass
    h = heating_rate(noise.lam, noise.r_c, species)
    u = unitary_harmonic(m0.x2, m0.xp_sym, m0.p2, m, omega, dt)
    q = csl_heating_harmonic(h, m, omega, dt)
    x_mean, p_mean = harmonic_means(m0.x_mean, m0.p_mean, m, omega, dt)
    return GasMoments(x2=u[0] + q[0], xp_sym=u[1] + q[1], p2=u[2] + q[2],
                      x_mean=x_mean, p_mean=p_mean)


def csl_harmonic_step_coefficient_form(m0: GasMoments, noise: Csl, species: AtomSpecies,
                                       omega: float, dt: float) -> GasMoments:
    """Harmonic solution written directly in terms of (A_w, B_w, C_w).

    Kept as an independent code path for tests; ill-conditioned for small omega.
    """
    if not omega > 0:
        raise DomainError(f"harmonic step needs omega > 0, got {omega}")
    m = species.mass
    k = harmonic_coefficients(m0, noise, species, omega)
    sn, cs = math.sin(2 * omega * dt), math.cos(2 * omega * dt)
    osc = k.b_w * sn - k.a_w * (1.0 - cs)
    return m0.with_second(
        x2=m0.x2 + osc / (2.0 * m * omega) + k.c_w * dt / m,
        xp_sym=-k.a_w * sn + k.b_w * cs + k.c_w,
        p2=m0.p2 + m * omega**2 * k.c_w * dt - 0.5 * m * omega * osc,
    )


# -- closed-form final variance


def _closed_form_times(protocol: Protocol):
    if not (protocol.dt1 > 0 and protocol.dt2 > 0 and protocol.omega > 0):
        raise DomainError("closed form needs positive dt1, dt2 and omega")
    return protocol.t1, protocol.t2, protocol.t3, protocol.dt2


def printed_coefficients(protocol: Protocol) -> ClosedFormCoefficients:
    """Coefficients as printed, with tau_p = dt2, t2 = t1 + dt2, t3 = detection time.

    These do not reproduce the staged composition; see
    :func:`derived_coefficients` for the consistent version.
    """
    t1, t2, t3, d = _closed_form_times(protocol)
    w = protocol.omega
    m = protocol.species.mass
    x0, p0 = protocol.initial.x2, protocol.initial.p2
    tp = d
    D = t3 - t2
    a_qm = (p0 + (x0 * m**2 + p0 * t1**2) * w**2) * (1 + D**2 * w**2) / (2 * m**2 * w**2)
    b_qm = (-(p0 - (x0 * m**2 + p0 * (D**2 + 4 * t1 * D + t1**2)) * w**2) / (2 * m**2 * w**2)
            + (x0 * m**2 + p0 * t1**2) * D**2 * w**2 / (2 * m**2))
    c_qm = (p0 * (t2 - tp) - (x0 * m**2 + p0 * t1 * (t2 - tp)) * D * w**2) / (w * m**2)
    a_csl = (6 * w * t3 + 2 * w**3 * (t2**3 + 2 * t3**3 + t1**3 - 3 * t3**2 * t2)
             + 2 * t1**3 * D**2 * w**5)
    b_csl = -2 * w * (3 * (t3 - d) + w**2 * t1 * (2 * t1**2 - 3 * (t3 - d)**2)
                      + w**4 * t1**3 * D**2)
    c_csl = (3 + 3 * w**2 * (D**2 - 2 * (t3 - d)**2)
             + 2 * w**4 * t1**2 * D * (3 * t3 - t1 - 3 * d))
    return ClosedFormCoefficients(a_qm, b_qm, c_qm, a_csl, b_csl, c_csl)


def derived_coefficients(protocol: Protocol) -> ClosedFormCoefficients:
    """Coefficients obtained by composing free, harmonic and free stages symbolically.

    QM coefficients assume <xp>_0 = 0. CSL coefficients are normalised to the
    same prefactor lambda A^2 hbar^2 / (8 m^2 w^3 r_C^2) as the printed ones.
    """
    t1, _, _, d = _closed_form_times(protocol)
    w = protocol.omega
    m = protocol.species.mass
    x0, p0 = protocol.initial.x2, protocol.initial.p2
    D = protocol.final_free_duration
    w2 = w * w
    a_qm = (x0 * (w2 * D**2 + 1) / 2
            + p0 * (w2 * t1**2 + 1) * (w2 * D**2 + 1) / (2 * m**2 * w2))
    b_qm = (-x0 * (w * D - 1) * (w * D + 1) / 2
            - p0 * (w2 * t1 * D - w * t1 - w * D - 1) * (w2 * t1 * D + w * t1 + w * D - 1)
            / (2 * m**2 * w2))
    c_qm = -x0 * w * D - p0 * (t1 + D) * (w2 * t1 * D - 1) / (m**2 * w)
    # heating terms h * P / (6 m^2 w^2) rescaled to the 8 m^2 w^3 / (3/2) prefactor
    scale = 8.0 * w / 6.0 * 1.5
    a_csl = scale * (3 * d * w2 * D**2 + 3 * d + w**4 * t1**3 * D**2 + w2 * t1**3
                     + 3 * w2 * t1 * D**2 + 2 * w2 * D**3 + 3 * t1 + 3 * D)
    b_csl = -scale * (w**4 * t1**3 * D**2 - w2 * t1**3 - 6 * w2 * t1**2 * D
                      - 3 * w2 * t1 * D**2 + 3 * t1 + 3 * D)
    c_csl = -scale / (2 * w) * (4 * w**4 * t1**3 * D + 6 * w**4 * t1**2 * D**2
                                - 6 * w2 * t1**2 - 12 * w2 * t1 * D - 3 * w2 * D**2 + 3)
    return ClosedFormCoefficients(a_qm, b_qm, c_qm, a_csl, b_csl, c_csl)


def csl_closed_form_final_x2(protocol: Protocol, noise: Csl,
                             variant: str = "printed") -> Tuple[float, float]:
    """Final x2 split into (qm_part, csl_part).

    ``variant="printed"`` evaluates the published coefficient formulas under
    the symbol mapping above; ``variant="derived"`` uses the self-consistent
    coefficients and matches the staged composition.
    """
    if variant == "printed":
        k = printed_coefficients(protocol)
    elif variant == "derived":
        k = derived_coefficients(protocol)
    else:
        raise ValueError(f"unknown closed-form variant {variant!r}")
    w, d = protocol.omega, protocol.dt2
    m = protocol.species.mass
    A = protocol.species.nucleon_count
    cs, sn = math.cos(2 * w * d), math.sin(2 * w * d)
    qm = k.a_qm + k.b_qm * cs + k.c_qm * sn
    pref = noise.lam * A**2 * HBAR**2 / (noise.r_c**2 * 8 * m**2 * w**3)
    csl = pref * (k.a_csl + k.b_csl * cs + k.c_csl * sn)
    return qm, csl
