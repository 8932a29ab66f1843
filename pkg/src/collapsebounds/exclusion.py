"""Confidence band, exclusion-grid scans and the analytic CSL bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erfinv

from .core import Csl, Dcsl, DomainError, GasMoments, NoiseModel, Protocol, QmOnly
from .dcsl import dcsl_rates
from .pipeline import DEFAULT_KICK_MODE, StageError, final_moments, parallel_map

DEFAULT_LAMBDA_RANGE = (1e-20, 1e-2)
DEFAULT_RC_RANGE = (1e-9, 1e-3)
DEFAULT_GRID_POINTS = 60


class InconsistentProtocolError(DomainError):
    """The lambda = 0 prediction already lies outside the measurement band."""


def cl_interval(mean: float, sigma: float, level: float) -> Tuple[float, float]:
    """Symmetric normal interval mean +- z sigma with z = sqrt(2) erfinv(level)."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if not 0.0 <= level < 1.0:
        raise DomainError(f"confidence level must lie in (0, 1), got {level}")
    z = math.sqrt(2.0) * float(erfinv(level))
    return mean - z * sigma, mean + z * sigma


@dataclass(frozen=True)
class MeasurementBand:
    mean: float = 120e-6
    sigma: float = 40e-6
    level: float = 0.95

    def __post_init__(self):
        cl_interval(self.mean, self.sigma, self.level)

    @property
    def interval(self) -> Tuple[float, float]:
        return cl_interval(self.mean, self.sigma, self.level)

    def contains(self, value: float) -> bool:
        lo, hi = self.interval
        return lo <= value <= hi


@dataclass
class ExclusionGrid:
    """Per-cell verdicts on a (r_C, lambda) grid; arrays are indexed [i_rc, j_lambda]."""

    lambda_axis: np.ndarray
    rc_axis: np.ndarray
    values: np.ndarray
    excluded: np.ndarray
    failed: np.ndarray
    model_tag: dict = field(default_factory=dict)
    value_name: str = "sigma_x"
    errors: Dict[Tuple[int, int], str] = field(default_factory=dict)

    def boundary(self) -> List[Tuple[float, Optional[float]]]:
        """First excluded lambda in each r_C column (None if the column is clear)."""
        out = []
        for i, rc in enumerate(self.rc_axis):
            hits = np.flatnonzero(self.excluded[i])
            out.append((float(rc), float(self.lambda_axis[hits[0]]) if hits.size else None))
        return out

    def boundary_at(self, r_c: float) -> Optional[float]:
        """Boundary lambda at ``r_c``, interpolated log-log between columns."""
        pts = [(rc, lam) for rc, lam in self.boundary() if lam is not None]
        if not pts:
            return None
        x = np.log10([p[0] for p in pts])
        y = np.log10([p[1] for p in pts])
        if not x[0] <= math.log10(r_c) <= x[-1]:
            return None
        return float(10 ** np.interp(math.log10(r_c), x, y))

    @property
    def excluded_count(self) -> int:
        return int(self.excluded.sum())


def log_axis(lo: float, hi: float, n: int) -> np.ndarray:
    if not (lo > 0 and hi > 0 and n >= 1):
        raise DomainError("log axis needs positive bounds and at least one point")
    return np.logspace(math.log10(lo), math.log10(hi), n)


def default_axes(n: int = DEFAULT_GRID_POINTS) -> Tuple[np.ndarray, np.ndarray]:
    return log_axis(*DEFAULT_LAMBDA_RANGE, n), log_axis(*DEFAULT_RC_RANGE, n)


def model_tag(noise: NoiseModel) -> dict:
    tag = {"family": noise.family}
    if hasattr(noise, "tau"):
        tag["tau"] = noise.tau
    if hasattr(noise, "t_csl"):
        tag["t_csl"] = noise.t_csl
    return tag


def _cell(args):
    protocol, noise, kick_mode = args
    try:
        return final_moments(protocol, noise, kick_mode).sigma_x, None
    except (StageError, ArithmeticError, ValueError) as exc:
        return math.nan, str(exc)


def _check_axis(axis, name):
    axis = np.asarray(axis, float)
    if axis.ndim != 1 or axis.size == 0 or np.any(~(axis > 0)):
        raise DomainError(f"{name} axis must be a non-empty list of positive values")
    return axis


def scan_exclusion(protocol: Protocol, family: NoiseModel, lambda_axis, rc_axis,
                   band: MeasurementBand = MeasurementBand(), workers: int = 1,
                   kick_mode: str = DEFAULT_KICK_MODE) -> ExclusionGrid:
    """Run the protocol per cell and mark cells whose sigma_x leaves the band.

    ``family`` is a noise template; its lambda and r_C are replaced per cell.
    """
    if isinstance(family, QmOnly):
        raise DomainError("scan needs a collapse-model template, not QmOnly")
    lam_ax = _check_axis(lambda_axis, "lambda")
    rc_ax = _check_axis(rc_axis, "r_C")
    jobs = [(protocol, replace(family, lam=float(lam), r_c=float(rc)), kick_mode)
            for rc in rc_ax for lam in lam_ax]
    results = parallel_map(_cell, jobs, workers)
    values = np.array([r[0] for r in results]).reshape(rc_ax.size, lam_ax.size)
    failed = np.isnan(values)
    lo, hi = band.interval
    excluded = ~failed & ((values < lo) | (values > hi))
    errors = {divmod(k, lam_ax.size): r[1] for k, r in enumerate(results) if r[1]}
    return ExclusionGrid(lam_ax, rc_ax, values, excluded, failed, model_tag(family),
                         "sigma_x", errors)


def csl_excess_x2(protocol: Protocol, lam: float, r_c: float) -> float:
    """CSL contribution to the final x2, obtained by propagating a zero initial state.

    The moment equations are linear with the heating as the only source, so
    this equals the difference to the lambda = 0 prediction without cancellation.
    """
    zero = replace(protocol, initial=GasMoments(x2=0.0, p2=0.0))
    return final_moments(zero, Csl(lam, r_c)).x2


def analytic_csl_bound(protocol: Protocol, band: MeasurementBand = MeasurementBand(),
                       reference: Tuple[float, float] = (1e-8, 1e-7)) -> Tuple[float, float]:
    """Return (K, limit) with x2_CSL = (lambda / r_C^2) K and lambda/r_C^2 < limit."""
    lam0, rc0 = reference
    K = csl_excess_x2(protocol, lam0, rc0) / (lam0 / rc0**2)
    qm_sigma = final_moments(protocol, QmOnly()).sigma_x
    if not band.contains(qm_sigma):
        raise InconsistentProtocolError(
            f"lambda = 0 prediction {qm_sigma:.4g} m lies outside the band {band.interval}")
    _, hi = band.interval
    return K, (hi**2 - qm_sigma**2) * 3.0 / K


def boost_exclusion(protocol: Protocol, t_csl_list: Sequence[float], u: float, lambda_axis,
                    rc_axis, displacement_limit: float = 1e-6) -> Dict[float, ExclusionGrid]:
    """Exclude cells where the boost displacement (1/2) u B t^2 exceeds the limit.

    t is the detection time of the protocol.
    """
    if not u >= 0:
        raise DomainError(f"boost speed must be >= 0, got {u}")
    lam_ax = _check_axis(lambda_axis, "lambda")
    rc_ax = _check_axis(rc_axis, "r_C")
    t = protocol.t3
    out = {}
    for T in t_csl_list:
        disp = np.empty((rc_ax.size, lam_ax.size))
        for i, rc in enumerate(rc_ax):
            for j, lam in enumerate(lam_ax):
                B = dcsl_rates(Dcsl(float(lam), float(rc), float(T)), protocol.species).big_b
                disp[i, j] = 0.5 * u * B * t**2
        out[float(T)] = ExclusionGrid(lam_ax, rc_ax, disp, disp > displacement_limit,
                                      np.zeros_like(disp, bool),
                                      {"family": "dcsl", "t_csl": float(T), "u": u},
                                      "displacement")
    return out
