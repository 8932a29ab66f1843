"""Fixed-step RK4 integrator for the moment equations.

Used to validate the closed-form propagators. Right-hand sides are coded
directly from the differential equations and share no code with the
integrated solutions. States are arrays ``[x2, xp_sym, p2]``; parameters may
be arrays, in which case the state has shape (3, N) and N systems are
integrated at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import HBAR, AtomSpecies, Ccsl, Csl, Dcsl, GasMoments, QmOnly

DEFAULT_STEPS = 100_000
MAX_STEP = 1e-4


class OracleError(ArithmeticError):
    pass


@dataclass(frozen=True)
class OdeSystem:
    """Moment ODE system: ``rhs(t, y)`` with y = [x2, xp_sym, p2]."""

    kind: str
    rhs: Callable[[float, np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    dimension: int = 3
    # time scale that must be resolved near t = 0 (memory kernels)
    transient: Optional[float] = None


def _rates(lam, r_c, A):
    lam, r_c = np.asarray(lam, float), np.asarray(r_c, float)
    return 3.0 * lam * A**2 * HBAR**2 / (2.0 * r_c**2)


def csl_system(lam, r_c, species: AtomSpecies, omega=0.0) -> OdeSystem:
    """d/dt of (x2, xp, p2) for white-noise CSL; omega = 0 gives free flight."""
    m = species.mass
    h = _rates(lam, r_c, species.nucleon_count)
    w2 = np.asarray(omega, float) ** 2

    def rhs(t, y):
        x2, xp, p2 = y
        return np.array([xp / m, 2.0 * p2 / m - 2.0 * m * w2 * x2, h - m * w2 * xp])

    kind = "csl-harmonic" if np.any(w2 > 0) else "csl-free"
    return OdeSystem(kind, rhs, dict(lam=lam, r_c=r_c, omega=omega))


def dcsl_system(lam, r_c, t_csl, species: AtomSpecies, omega=0.0) -> OdeSystem:
    m = species.mass
    A = species.nucleon_count
    lam, r_c, t_csl = (np.asarray(v, float) for v in (lam, r_c, t_csl))
    k = HBAR**2 / (8.0 * m * 1.380649e-23 * t_csl * r_c**2)
    damp = 2.0 * lam * A**2 * k / (1.0 + k) ** 4
    chi = 4.0 * k * lam * A**2 / (1.0 + k) ** 5
    alpha = 6.0 * lam * A**2 * r_c**2 * k**2 / (1.0 + k) ** 3
    source = 4.0 * lam * A**2 / (1.0 + k) ** 5 * 3.0 * HBAR**2 / (8.0 * r_c**2)
    w2 = np.asarray(omega, float) ** 2

    def rhs(t, y):
        x2, xp, p2 = y
        return np.array([
            xp / m + alpha,
            2.0 * p2 / m - 2.0 * m * w2 * x2 - damp * xp,
            -m * w2 * xp - chi * p2 + source,
        ])

    kind = "dcsl-harmonic" if np.any(w2 > 0) else "dcsl-free"
    return OdeSystem(kind, rhs, dict(lam=lam, r_c=r_c, t_csl=t_csl, omega=omega))


def ccsl_system(lam, r_c, tau, species: AtomSpecies, omega=0.0, t_start=0.0) -> OdeSystem:
    """cCSL equations with the memory integrals evaluated analytically per call.

    The memory integrals run from ``t_start`` (start of the noise history)
    to t. Drives carry the factor 2 that makes tau -> 0 the white-noise limit.
    """
    m = species.mass
    h = _rates(lam, r_c, species.nucleon_count)
    tau = np.asarray(tau, float)
    w = np.asarray(omega, float)
    kap = 1.0 / tau
    den = kap * kap + w * w

    def drives(t):
        s = t - t_start
        e = np.exp(-kap * s)
        c = np.cos(w * s)
        sin_over_w = s * np.sinc(w * s / np.pi)
        # int_0^s e^(-kap y) sin(w y) / w dy and int_0^s e^(-kap y) cos(w y) dy
        sin_int = (1.0 - e * (kap * sin_over_w + c)) / den
        cos_int = (kap - e * (kap * c - w * w * sin_over_w)) / den
        return sin_int / tau, cos_int / tau

    def rhs(t, y):
        x2, xp, p2 = y
        ds, dc = drives(t)
        return np.array([
            xp / m,
            2.0 * p2 / m - 2.0 * m * w * w * x2 + 2.0 * h / m * ds,
            -m * w * w * xp + h * dc,
        ])

    return OdeSystem("ccsl-history", rhs, dict(lam=lam, r_c=r_c, tau=tau, omega=omega),
                     transient=tau)


def system_for(noise, species: AtomSpecies, omega: float = 0.0) -> OdeSystem:
    if isinstance(noise, QmOnly):
        return csl_system(0.0, 1.0, species, omega)
    if isinstance(noise, Csl):
        return csl_system(noise.lam, noise.r_c, species, omega)
    if isinstance(noise, Dcsl):
        return dcsl_system(noise.lam, noise.r_c, noise.t_csl, species, omega)
    if isinstance(noise, Ccsl):
        return ccsl_system(noise.lam, noise.r_c, noise.tau, species, omega)
    raise TypeError(f"no ODE system for {type(noise).__name__}")


def default_step(t_span):
    return np.minimum(np.asarray(t_span, float) / DEFAULT_STEPS, MAX_STEP)


def _rk4_segment(rhs, y, t0, t1, n):
    """n equal RK4 steps from t0 to t1; t0, t1 may be per-column arrays."""
    hstep = (t1 - t0) / n
    for i in range(n):
        t = t0 + i * hstep
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * hstep, y + 0.5 * hstep * k1)
        k3 = rhs(t + 0.5 * hstep, y + 0.5 * hstep * k2)
        k4 = rhs(t + hstep, y + hstep * k3)
        y = y + (hstep / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def _n_steps(span, step):
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(span > 0, span / step, 0.0)
    return max(1, int(np.ceil(np.max(ratio) - 1e-9)))


def rk4_array(system: OdeSystem, y0, t_end, step=None) -> np.ndarray:
    """Integrate from 0 to ``t_end`` with classical RK4 on raw arrays.

    ``t_end`` and ``step`` may be arrays matching the batch; all columns take
    the same number of steps, each no longer than its requested ``step``.
    """
    t_end = np.asarray(t_end, float)
    if np.any(~(t_end >= 0)):
        raise ValueError(f"t_end must be >= 0, got {t_end}")
    y = np.array(y0, dtype=float)
    if np.all(t_end == 0):
        return y
    step = default_step(np.max(t_end)) if step is None else np.asarray(step, float)
    if np.any(~(step > 0)):
        raise ValueError(f"step must be positive, got {step}")
    t0 = np.zeros_like(t_end)
    if system.transient is not None:
        # resolve the memory transient with a finer grid first
        tr = np.asarray(system.transient, float)
        t0 = np.minimum(t_end, 40.0 * tr)
        y = _rk4_segment(system.rhs, y, 0.0, t0, _n_steps(t0, np.minimum(step, tr / 40.0)))
    if np.any(t_end > t0):
        y = _rk4_segment(system.rhs, y, t0, t_end, _n_steps(t_end - t0, step))
    if not np.all(np.isfinite(y)):
        raise OracleError(f"non-finite state in {system.kind} integration")
    return y


def rk4_integrate(system: OdeSystem, initial: GasMoments, t_end: float,
                  step: Optional[float] = None) -> GasMoments:
    """Integrate the second moments; means are carried over unchanged."""
    y = rk4_array(system, initial.second(), t_end, step)
    return initial.with_second(*y)


def rk4_samples(system: OdeSystem, y0, times, step: Optional[float] = None) -> np.ndarray:
    """Single pass over [0, max(times)] recording the state at each requested time.

    Steps are shortened to land on every sample time; the memory transient,
    if any, is resolved with the same fine grid as :func:`rk4_array`.
    """
    times = np.asarray(times, float)
    if times.size == 0:
        return np.empty((0, 3))
    t_end = float(times.max())
    step = float(default_step(t_end)) if step is None else float(step)
    fine_end, fine_step = 0.0, step
    if system.transient is not None:
        tr = float(system.transient)
        fine_end, fine_step = min(t_end, 40.0 * tr), min(step, tr / 40.0)
    marks = np.unique(np.concatenate([[0.0, fine_end], times[times > 0]]))
    y = np.array(y0, dtype=float)
    states = {0.0: y}
    for a, b in zip(marks[:-1], marks[1:]):
        h = fine_step if b <= fine_end else step
        y = _rk4_segment(system.rhs, y, a, b, max(1, int(np.ceil((b - a) / h - 1e-9))))
        states[float(b)] = y
    if not np.all(np.isfinite(y)):
        raise OracleError(f"non-finite state in {system.kind} integration")
    return np.array([states[float(t)] for t in times])
