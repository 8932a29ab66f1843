"""Moment dynamics of a delta-kick cooled atom cloud under collapse models."""

from .core import (CONSTANTS, HBAR, K_B, RB87, AtomSpecies, Ccsl, Csl, Dcsl, DomainError,
                   GasMoments, PhysicalConstants, Protocol, QmOnly, dcsl_k,
                   delta_kick_frequency, heating_rate, kinetic_energy, moments_from_temperature,
                   temperature_from_moments)
from .pipeline import run_protocol

__all__ = [
    "CONSTANTS", "HBAR", "K_B", "RB87", "AtomSpecies", "Ccsl", "Csl", "Dcsl", "DomainError",
    "GasMoments", "PhysicalConstants", "Protocol", "QmOnly", "dcsl_k", "delta_kick_frequency",
    "heating_rate", "kinetic_energy", "moments_from_temperature", "temperature_from_moments",
    "run_protocol",
]
