"""Full delta-kick protocol: free flight, harmonic kick, free flight.

Stage solutions are evaluated in closed form from the state at the start of
each stage, so sampling only adds recorded points and never changes the
final state. Reported conventions: sigma_x is the single-axis spread
sqrt(x2/3); temperature is T = 2E/(3 k_B) with E = p2/(2m).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .ccsl import ccsl_free_moments, ccsl_harmonic_moments
from .core import (K_B, Ccsl, Csl, Dcsl, DomainError, GasMoments, NoiseModel, Protocol,
                   QmOnly, kinetic_energy, moments_from_temperature)
from .csl import csl_free_step, csl_harmonic_step
from .dcsl import HARMONIC_MODES, dcsl_free_step, dcsl_harmonic_step

DEFAULT_KICK_MODE = "exact"


class StageError(RuntimeError):
    """A stage propagator failed; carries the stage name and the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class TrajectoryRecord:
    times: List[float]
    moments: List[GasMoments]
    stages: List[str]
    final_sigma_x: float
    final_energy: float
    final_temperature: float

    @property
    def final(self) -> GasMoments:
        return self.moments[-1]


@dataclass(frozen=True)
class CurveRow:
    parameter: float
    sigma_x: float = math.nan
    energy: float = math.nan
    error: Optional[str] = None


def sigma_x(m: GasMoments) -> float:
    return m.sigma_x


def temperature_from_energy(energy: float) -> float:
    return 2.0 * energy / (3.0 * K_B)


def _propagators(noise: NoiseModel, protocol: Protocol, kick_mode: str,
                 numeric_step: Optional[float]):
    sp = protocol.species
    w = protocol.omega
    if isinstance(noise, QmOnly):
        noise = Csl(lam=0.0, r_c=1.0)
    if isinstance(noise, Csl):
        free = lambda m, t: csl_free_step(m, noise, sp, t)
        kick = lambda m, t: csl_harmonic_step(m, noise, sp, w, t)
    elif isinstance(noise, Ccsl):
        free = lambda m, t: ccsl_free_moments(m, noise, sp, t)
        kick = lambda m, t: ccsl_harmonic_moments(m, noise, sp, w, t)
    elif isinstance(noise, Dcsl):
        if kick_mode not in HARMONIC_MODES:
            raise ValueError(f"unknown kick mode {kick_mode!r}")
        free = lambda m, t: dcsl_free_step(m, noise, sp, t)
        kick = lambda m, t: dcsl_harmonic_step(m, noise, sp, w, t, mode=kick_mode,
                                               step=numeric_step)
    else:
        raise TypeError(f"unsupported noise model {type(noise).__name__}")
    if w == 0:
        kick = free
    return free, kick


def _stage_times(duration: float, sampling: Optional[float]) -> List[float]:
    if sampling is None or duration == 0:
        return []
    n = int(math.floor(duration / sampling + 1e-9))
    return [i * sampling for i in range(1, n + 1) if i * sampling < duration * (1 - 1e-12)]


def run_protocol(protocol: Protocol, noise: NoiseModel, sampling: Optional[float] = None,
                 kick_mode: str = DEFAULT_KICK_MODE) -> TrajectoryRecord:
    """Propagate the initial moments through all three stages.

    ``sampling`` adds intermediate records every ``sampling`` seconds within
    each stage. ``kick_mode`` selects the dCSL treatment of the kick.
    """
    if sampling is not None and not sampling > 0:
        raise DomainError(f"sampling must be positive, got {sampling}")
    numeric_step = None if sampling is None else sampling
    free, kick = _propagators(noise, protocol, kick_mode, numeric_step)
    stages = [("free1", protocol.dt1, free), ("kick", protocol.dt2, kick),
              ("free2", protocol.final_free_duration, free)]
    state = protocol.initial
    t0 = 0.0
    times, moments, labels = [0.0], [state], ["release"]
    for name, duration, prop in stages:
        try:
            for s in _stage_times(duration, sampling):
                times.append(t0 + s)
                moments.append(prop(state, s))
                labels.append(name)
            end = prop(state, duration) if duration > 0 else state
        except (ArithmeticError, ValueError) as exc:
            raise StageError(name, exc) from exc
        t0 += duration
        state = end
        if duration > 0:
            times.append(t0)
            moments.append(state)
            labels.append(name)
    energy = kinetic_energy(state, protocol.species)
    return TrajectoryRecord(times, moments, labels, state.sigma_x, energy,
                            temperature_from_energy(energy))


def final_moments(protocol: Protocol, noise: NoiseModel,
                  kick_mode: str = DEFAULT_KICK_MODE) -> GasMoments:
    return run_protocol(protocol, noise, None, kick_mode).final


# -- sweeps


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Order-preserving map, optionally over a process pool."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _row(args) -> CurveRow:
    protocol, noise, param, kick_mode = args
    try:
        rec = run_protocol(protocol, noise, None, kick_mode)
    except (StageError, ArithmeticError, ValueError) as exc:
        return CurveRow(param, error=str(exc))
    return CurveRow(param, rec.final_sigma_x, rec.final_energy)


def sweep_kick_time(protocol: Protocol, noise: NoiseModel, dt2_grid: Sequence[float],
                    workers: int = 1, kick_mode: str = DEFAULT_KICK_MODE) -> List[CurveRow]:
    """sigma_x and energy at detection as functions of the kick duration."""
    jobs = []
    for d in dt2_grid:
        if not d >= 0:
            raise DomainError(f"kick durations must be >= 0, got {d}")
        jobs.append((protocol.with_kick(float(d)), noise, float(d), kick_mode))
    return parallel_map(_row, jobs, workers)


def sweep_noise_temperature(protocol: Protocol, base: Dcsl, t_grid: Sequence[float],
                            workers: int = 1,
                            kick_mode: str = DEFAULT_KICK_MODE) -> List[CurveRow]:
    jobs = []
    for T in t_grid:
        if not T > 0:
            raise DomainError(f"noise temperatures must be positive, got {T}")
        jobs.append((protocol, replace(base, t_csl=float(T)), float(T), kick_mode))
    return parallel_map(_row, jobs, workers)


def sweep_rc(protocol: Protocol, base: NoiseModel, rc_grid: Sequence[float],
             workers: int = 1, kick_mode: str = DEFAULT_KICK_MODE) -> List[CurveRow]:
    jobs = []
    for rc in rc_grid:
        if not rc > 0:
            raise DomainError(f"r_C values must be positive, got {rc}")
        jobs.append((protocol, replace(base, r_c=float(rc)), float(rc), kick_mode))
    return parallel_map(_row, jobs, workers)


def calibrate_initial_temperature(protocol: Protocol, target_sigma: float = 120e-6) -> float:
    """Initial temperature for which the lambda = 0 prediction equals ``target_sigma``.

    Uses linearity of the unitary final x2 in the initial p2.
    """
    qm = QmOnly()
    base = replace(protocol, initial=replace(protocol.initial, p2=0.0))
    unit = replace(protocol, initial=replace(protocol.initial, p2=1.0))
    x_a = final_moments(base, qm).x2
    slope = final_moments(unit, qm).x2 - x_a
    target = 3.0 * target_sigma**2
    if slope <= 0 or target < x_a:
        raise DomainError("target spread cannot be reached by adjusting the initial temperature")
    p2 = (target - x_a) / slope
    return p2 / moments_from_temperature(1.0, protocol.species)


def sigma_curve(rows: Sequence[CurveRow]) -> np.ndarray:
    return np.array([r.sigma_x for r in rows])
