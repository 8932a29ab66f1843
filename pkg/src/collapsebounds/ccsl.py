"""Colored-noise CSL with exponential correlator.

The correlator is taken as f(s) = exp(-|s|/tau) / (2 tau). The memory
terms enter the moment equations through the half-line integral
int_0^t f(s) ... ds, which tends to 1/2 of the white-noise kernel as
tau -> 0. The drives here carry a factor 2 so that tau -> 0 recovers the
white-noise heating rate h exactly; this matches the published free-flight
p2 solution.

Memory is counted from the start of each stage.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

from scipy import integrate

from .core import HBAR, AtomSpecies, Ccsl, DomainError, GasMoments, Protocol, heating_rate
from .csl import _sinc_t, harmonic_means, unitary_harmonic

QUAD_EPSREL = 1e-10
QUAD_EPSABS = 1e-30
VALIDITY_THRESHOLD = 0.1


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message: str, achieved: float, requested: float):
        super().__init__(f"{message} (achieved abs error {achieved:.3e}, requested {requested:.3e})")
        self.achieved = achieved
        self.requested = requested


@dataclass(frozen=True)
class ColoredNoiseSpec:
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")

    @property
    def cutoff_omega(self) -> float:
        return 1.0 / self.tau


@dataclass(frozen=True)
class Condition:
    holds: bool
    margin: float


@dataclass(frozen=True)
class ValidityReport:
    cond_omega_tau: Condition
    cond_momentum: Condition
    cond_q2: Condition
    regime: str
    regime_threshold_omega: float
    regime_thresholds: dict

    @property
    def all_hold(self) -> bool:
        return self.cond_omega_tau.holds and self.cond_momentum.holds and self.cond_q2.holds


def noise_correlator(s: float, tau: float) -> float:
    return math.exp(-abs(s) / tau) / (2.0 * tau)


def _damped_integrals(x: float, omega: float, tau: float):
    """int_0^x e^(-y/tau) cos(wy) dy and int_0^x e^(-y/tau) sin(wy)/w dy."""
    kappa = 1.0 / tau
    den = kappa * kappa + omega * omega
    e = math.exp(-kappa * x)
    c, s = math.cos(omega * x), _sinc_t(omega, x)
    ic = (kappa - e * (kappa * c - omega * omega * s)) / den
    # sin integral divided by omega: [1 - e (kappa s + c)] / den
    is_ = (1.0 - e * (kappa * s + c)) / den
    return ic, is_


def g_kernel(x: float, omega: float, tau: float) -> float:
    """int_0^x e^(-y/tau) cos(wy)/(2 tau) dy + e^(-x/tau) sin(wx)/(2 w tau)."""
    if x < 0:
        raise DomainError(f"g_kernel needs x >= 0, got {x}")
    ic, _ = _damped_integrals(x, omega, tau)
    return ic / (2.0 * tau) + math.exp(-x / tau) * _sinc_t(omega, x) / (2.0 * tau)


def memory_drives(t: float, omega: float, tau: float):
    """Normalised drive factors (2 S(t), 2 C(t)) of the xp and p2 equations.

    S(t) = int_0^t e^(-y/tau) sin(wy)/(2 w tau) dy,
    C(t) = int_0^t e^(-y/tau) cos(wy)/(2 tau) dy.
    """
    ic, is_ = _damped_integrals(t, omega, tau)
    return is_ / tau, ic / tau


def _quad(f, t, tau, epsrel):
    pts = [p for p in (tau, 5 * tau, 40 * tau) if 0 < p < t]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info = integrate.quad(f, 0.0, t, epsabs=QUAD_EPSABS, epsrel=epsrel,
                                        limit=500, points=pts or None, full_output=1)[:3]
    requested = max(QUAD_EPSABS, epsrel * abs(val))
    if not math.isfinite(val) or err > 10.0 * requested:
        raise QuadratureError("cCSL memory integral did not converge", err, requested)
    return val


def ccsl_harmonic_moments(m0: GasMoments, noise: Ccsl, species: AtomSpecies,
                          omega: float, t: float, epsrel: float = QUAD_EPSREL) -> GasMoments:
    """Harmonic-trap evolution with the exponential memory kernel.

    Double time integrals are reduced to single ones by exchanging the order
    of integration and evaluated with adaptive Gauss-Kronrod quadrature.
    """
    if not omega > 0:
        raise DomainError(f"harmonic step needs omega > 0, got {omega}")
    if not t >= 0:
        raise DomainError(f"duration must be >= 0, got {t}")
    m = species.mass
    tau = noise.tau
    h = heating_rate(noise.lam, noise.r_c, species)
    u = unitary_harmonic(m0.x2, m0.xp_sym, m0.p2, m, omega, t)
    x_mean, p_mean = harmonic_means(m0.x_mean, m0.p_mean, m, omega, t)
    if h == 0.0 or t == 0.0:
        return GasMoments(x2=u[0], xp_sym=u[1], p2=u[2], x_mean=x_mean, p_mean=p_mean)

    def G(s):
        return 2.0 * g_kernel(s, omega, tau)

    # sin(2w(t-s))/w and sin^2(w(t-s))/w^2 written to stay finite as w -> 0
    def xp_int(s):
        r = t - s
        return G(s) * 2.0 * _sinc_t(omega, r) * math.cos(omega * r)

    def sq_int(s):
        return G(s) * _sinc_t(omega, t - s) ** 2

    def lin_int(s):
        return (t - s) * math.exp(-s / tau) * math.cos(omega * s) / tau

    i_xp = _quad(xp_int, t, tau, epsrel)
    i_sq = _quad(sq_int, t, tau, epsrel)
    i_lin = _quad(lin_int, t, tau, epsrel)
    return GasMoments(
        x2=u[0] + h * i_sq / m**2,
        xp_sym=u[1] + h * i_xp / m,
        p2=u[2] + h * (i_lin - omega**2 * i_sq),
        x_mean=x_mean, p_mean=p_mean,
    )


def _expm1_tail(u: float, start: int, coef) -> float:
    """Sum_{k >= start} coef(k) u^k / k! for small u."""
    total, k, fact = 0.0, start, math.factorial(start)
    while True:
        term = coef(k) * u**k / fact
        total += term
        if abs(term) <= 1e-18 * abs(total) or k > start + 40:
            return total
        k += 1
        fact *= k


def ccsl_free_profiles(u: float):
    """Dimensionless heating profiles (P, X, Q) with u = t / tau.

    p2 gains h tau P, xp gains (h/m) tau^2 X, x2 gains (h/m^2) tau^3 Q.
    """
    if u < 1.0:
        P = _expm1_tail(u, 2, lambda k: (-1) ** k)
        X = _expm1_tail(u, 3, lambda k: 2 * (-1) ** k * (1 - k))
        Q = _expm1_tail(u, 4, lambda k: (-1) ** k * (2 * k - 4))
        return P, X, Q
    e = math.exp(-u)
    P = u - 1.0 + e
    X = u * u - 2.0 * (1.0 - e) + 2.0 * u * e
    Q = u**3 / 3.0 - 2.0 * u + 4.0 * (1.0 - e) - 2.0 * u * e
    return P, X, Q


def ccsl_free_moments(m0: GasMoments, noise: Ccsl, species: AtomSpecies, t: float) -> GasMoments:
    """Closed-form free flight under colored noise."""
    if not t >= 0:
        raise DomainError(f"duration must be >= 0, got {t}")
    m = species.mass
    tau = noise.tau
    h = heating_rate(noise.lam, noise.r_c, species)
    P, X, Q = ccsl_free_profiles(t / tau)
    x_mean = tuple(x + p * t / m for x, p in zip(m0.x_mean, m0.p_mean))
    return GasMoments(
        x2=m0.x2 + m0.xp_sym * t / m + m0.p2 * t**2 / m**2 + h * tau**3 * Q / m**2,
        xp_sym=m0.xp_sym + 2.0 * m0.p2 * t / m + h * tau**2 * X / m,
        p2=m0.p2 + h * tau * P,
        x_mean=x_mean, p_mean=m0.p_mean,
    )


def printed_free_moments(m0: GasMoments, noise: Ccsl, species: AtomSpecies, t: float) -> GasMoments:
    """Free-flight solutions in their published form.

    The p2 expression is exact; the xp and x2 expressions do not solve the
    stated equations and are kept only as a reference fixture.
    """
    m = species.mass
    tau = noise.tau
    h = heating_rate(noise.lam, noise.r_c, species)
    e = math.exp(-t / tau)
    return m0.with_second(
        x2=(m0.x2 + m0.xp_sym * t / m + m0.p2 * t**2 / m**2
            + 2.0 * h / m**2 * (t**3 / 6 - t * tau / 2 * (0.5 + e) + tau**3 / 2 * (1 - e))),
        xp_sym=m0.xp_sym + 2.0 * m0.p2 * t / m + h / m * (t**2 - tau * t * (1 - e)),
        p2=m0.p2 + h * (t - tau * (1 - e)),
    )


def white_noise_validity(noise: Ccsl, protocol: Protocol,
                         p_max: Optional[float] = None) -> ValidityReport:
    """Evaluate the three white-noise conditions as dimensionless margins.

    A condition holds when its margin is below 0.1. ``p_max`` defaults to
    |<p>| + <p2>^(1/2) of the protocol's initial state.
    """
    m = protocol.species.mass
    tau, r_c = noise.tau, noise.r_c
    if p_max is None:
        pm = math.sqrt(sum(c * c for c in protocol.initial.p_mean))
        p_max = pm + math.sqrt(protocol.initial.p2)
    q = HBAR / r_c
    m_wt = protocol.omega * tau
    m_mom = q * p_max * tau / (HBAR * m)
    m_q2 = q * q * tau / (2.0 * m * HBAR)
    thresholds = {
        "r_c >= 1e-5 m": 1e3,
        "1e-6 m <= r_c <= 1e-5 m": 1e-3 / r_c,
        "r_c <= 1e-6 m": 1e-9 / r_c**2,
    }
    if r_c >= 1e-5:
        regime = "r_c >= 1e-5 m"
    elif r_c >= 1e-6:
        regime = "1e-6 m <= r_c <= 1e-5 m"
    else:
        regime = "r_c <= 1e-6 m"

    def cond(x):
        return Condition(holds=x < VALIDITY_THRESHOLD, margin=x)

    return ValidityReport(cond(m_wt), cond(m_mom), cond(m_q2), regime,
                          thresholds[regime], thresholds)
