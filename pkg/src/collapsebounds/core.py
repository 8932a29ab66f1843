"""Shared physical model: constants, species, gas moments, protocol and noise models.

Conventions
-----------
All quantities are SI. Second moments are 3D totals, i.e. ``x2`` is
<|x|^2> summed over the three Cartesian axes. The single-axis standard
deviation reported against measured cloud widths is ``sqrt(x2 / 3)``.
Temperatures derived from momentum spread use 3D equipartition,
``p2 = 3 m k_B T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Tuple, Union

import numpy as np

Vector3 = Tuple[float, float, float]
ZERO3: Vector3 = (0.0, 0.0, 0.0)


class DomainError(ValueError):
    """An argument lies outside the physical domain of an operation."""


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.054571817e-34
    k_B: float = 1.380649e-23


CONSTANTS = PhysicalConstants()
HBAR = CONSTANTS.hbar
K_B = CONSTANTS.k_B


@dataclass(frozen=True)
class AtomSpecies:
    mass: float
    nucleon_count: int
    name: str = ""

    def __post_init__(self):
        if not self.mass > 0:
            raise DomainError(f"species mass must be positive, got {self.mass}")
        if int(self.nucleon_count) != self.nucleon_count or self.nucleon_count < 1:
            raise DomainError(f"nucleon count must be an integer >= 1, got {self.nucleon_count}")


RB87 = AtomSpecies(mass=1.44e-25, nucleon_count=87, name="Rb87")
SPECIES_PRESETS = {"Rb87": RB87}


def _vec3(v) -> Vector3:
    out = tuple(float(c) for c in v)
    if len(out) != 3:
        raise DomainError(f"expected a 3-vector, got {v!r}")
    if not all(math.isfinite(c) for c in out):
        raise DomainError(f"vector components must be finite, got {v!r}")
    return out


@dataclass(frozen=True)
class GasMoments:
    """Per-atom moments of the cloud.

    ``x2``, ``p2`` are variances (3D totals), ``xp_sym`` is <x.p + p.x>,
    and the means are 3-vectors.
    """

    x2: float
    p2: float
    xp_sym: float = 0.0
    x_mean: Vector3 = ZERO3
    p_mean: Vector3 = ZERO3

    def __post_init__(self):
        object.__setattr__(self, "x_mean", _vec3(self.x_mean))
        object.__setattr__(self, "p_mean", _vec3(self.p_mean))
        for name in ("x2", "p2", "xp_sym"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")

    def second(self) -> np.ndarray:
        """Second moments as the array ``[x2, xp_sym, p2]``."""
        return np.array([self.x2, self.xp_sym, self.p2])

    def with_second(self, x2: float, xp_sym: float, p2: float) -> "GasMoments":
        return replace(self, x2=float(x2), xp_sym=float(xp_sym), p2=float(p2))

    def uncertainty_product(self) -> float:
        """x2*p2 - (xp_sym/2)^2, non-negative for any physical state."""
        return self.x2 * self.p2 - 0.25 * self.xp_sym**2

    @property
    def sigma_x(self) -> float:
        """Single-axis position standard deviation."""
        return math.sqrt(max(self.x2, 0.0) / 3.0)


# -- noise models


@dataclass(frozen=True)
class QmOnly:
    family = "qm"


@dataclass(frozen=True)
class Csl:
    lam: float
    r_c: float
    family = "csl"

    def __post_init__(self):
        _check_csl(self.lam, self.r_c)


@dataclass(frozen=True)
class Ccsl:
    lam: float
    r_c: float
    tau: float
    family = "ccsl"

    def __post_init__(self):
        _check_csl(self.lam, self.r_c)
        if not self.tau > 0:
            raise DomainError(f"correlation time tau must be positive, got {self.tau}")

    @property
    def cutoff_omega(self) -> float:
        return 1.0 / self.tau


@dataclass(frozen=True)
class Dcsl:
    lam: float
    r_c: float
    t_csl: float
    boost: Vector3 = ZERO3
    family = "dcsl"

    def __post_init__(self):
        _check_csl(self.lam, self.r_c)
        if not self.t_csl > 0:
            raise DomainError(f"noise temperature must be positive, got {self.t_csl}")
        object.__setattr__(self, "boost", _vec3(self.boost))


NoiseModel = Union[QmOnly, Csl, Ccsl, Dcsl]


def _check_csl(lam, r_c):
    if not (lam >= 0 and math.isfinite(lam)):
        raise DomainError(f"collapse rate lambda must be >= 0, got {lam}")
    if not r_c > 0:
        raise DomainError(f"r_C must be positive, got {r_c}")


def with_lambda(noise: NoiseModel, lam: float) -> NoiseModel:
    if isinstance(noise, QmOnly):
        return noise
    return replace(noise, lam=lam)


def heating_rate(lam: float, r_c: float, species: AtomSpecies) -> float:
    """White-noise CSL momentum diffusion, d<p^2>/dt = 3 lambda A^2 hbar^2 / (2 r_C^2)."""
    return 1.5 * lam * species.nucleon_count**2 * HBAR**2 / r_c**2


# -- protocol


@dataclass(frozen=True)
class Protocol:
    """Delta-kick sequence: free flight ``dt1``, harmonic kick ``dt2``, free flight ``dt3``.

    ``dt3_reference`` selects whether ``dt3`` is counted from the end of the
    kick ("kick_end", default) or is the absolute detection time
    ("release").
    """

    dt1: float = 1.1
    dt2: float = 0.035
    dt3: float = 1.8
    omega: float = 6.7
    species: AtomSpecies = RB87
    initial: GasMoments = field(default=None)  # type: ignore[assignment]
    dt3_reference: str = "kick_end"

    def __post_init__(self):
        for name in ("dt1", "dt2", "dt3"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.omega >= 0:
            raise DomainError(f"omega must be >= 0, got {self.omega}")
        if self.dt3_reference not in ("kick_end", "release"):
            raise DomainError(f"dt3_reference must be 'kick_end' or 'release', got {self.dt3_reference!r}")
        if self.initial is None:
            object.__setattr__(self, "initial", default_initial_moments(self.species))
        if self.final_free_duration < 0:
            raise DomainError("detection time precedes the end of the kick")

    @property
    def t1(self) -> float:
        """Kick start time."""
        return self.dt1

    @property
    def t2(self) -> float:
        """Kick end time."""
        return self.dt1 + self.dt2

    @property
    def final_free_duration(self) -> float:
        if self.dt3_reference == "kick_end":
            return self.dt3
        return self.dt3 - self.dt1 - self.dt2

    @property
    def t3(self) -> float:
        """Detection time."""
        return self.t2 + self.final_free_duration

    def with_kick(self, dt2: float) -> "Protocol":
        return replace(self, dt2=dt2)


DEFAULT_SIGMA0 = 56e-6
DEFAULT_TEMPERATURE = 1600e-12


def default_initial_moments(species: AtomSpecies = RB87,
                            sigma0: float = DEFAULT_SIGMA0,
                            temperature: float = DEFAULT_TEMPERATURE) -> GasMoments:
    """Trapped cloud with single-axis width ``sigma0``, thermal momenta, no correlation."""
    return GasMoments(x2=3.0 * sigma0**2, p2=moments_from_temperature(temperature, species))


# -- conversions


def delta_kick_frequency(dt_min: float, dt1: float, dt3: float, gamma2: float) -> float:
    """Kick trap frequency for uncorrelated initial position and velocity."""
    for name, v in (("dt_min", dt_min), ("dt1", dt1), ("dt3", dt3)):
        if not v > 0:
            raise DomainError(f"{name} must be positive, got {v}")
    if not 0.0 <= gamma2 <= 1.0:
        raise DomainError(f"gamma2 must lie in [0, 1], got {gamma2}")
    return math.sqrt((1.0 / dt_min) * (1.0 / dt3 + (1.0 - gamma2) / dt1))


def moments_from_temperature(T: float, species: AtomSpecies = RB87) -> float:
    if not T >= 0:
        raise DomainError(f"temperature must be >= 0, got {T}")
    return 3.0 * species.mass * K_B * T


def temperature_from_moments(p2: float, species: AtomSpecies = RB87) -> float:
    if not p2 >= 0:
        raise DomainError(f"momentum variance must be >= 0, got {p2}")
    return p2 / (3.0 * species.mass * K_B)


def kinetic_energy(moments: GasMoments, species: AtomSpecies = RB87) -> float:
    return moments.p2 / (2.0 * species.mass)


def dcsl_k(t_csl: float, species: AtomSpecies, r_c: float) -> float:
    """Dimensionless dissipation parameter k = hbar^2 / (8 m k_B T r_C^2)."""
    if not t_csl > 0:
        raise DomainError(f"noise temperature must be positive, got {t_csl}")
    if not r_c > 0:
        raise DomainError(f"r_C must be positive, got {r_c}")
    return HBAR**2 / (8.0 * species.mass * K_B * t_csl * r_c**2)
