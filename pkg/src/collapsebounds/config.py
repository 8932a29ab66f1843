"""JSON run configuration with explicit physical units.

Dimensioned fields are strings such as ``"35 ms"`` or ``"1600 pK"``; bare
numbers are rejected for them. Unknown keys are errors. Error messages point
at the line of the offending key in the source file.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from .core import (RB87, SPECIES_PRESETS, AtomSpecies, Ccsl, Csl, Dcsl, DomainError, NoiseModel,
                   Protocol, QmOnly, default_initial_moments)
from .exclusion import (DEFAULT_GRID_POINTS, DEFAULT_LAMBDA_RANGE, DEFAULT_RC_RANGE,
                        MeasurementBand)

ENV_VAR = "COLLAPSEBOUNDS_CONFIG"

UNITS = {
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "length": {"m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9},
    "temperature": {"K": 1.0, "mK": 1e-3, "uK": 1e-6, "nK": 1e-9, "pK": 1e-12},
    "rate": {"/s": 1.0, "1/s": 1.0, "s^-1": 1.0, "Hz": 1.0},
    "angular": {"rad/s": 1.0, "/s": 1.0},
    "speed": {"m/s": 1.0},
    "mass": {"kg": 1.0},
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S+)\s*$")


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + message)
        self.line = line


@dataclass
class ScanSettings:
    lambda_axis: List[float]
    rc_axis: List[float]
    band: MeasurementBand
    t_csl_list: List[float] = field(default_factory=list)
    boost_u: Optional[float] = None
    displacement_limit: float = 1e-6


@dataclass
class SweepSettings:
    parameter: str = "dt2"
    values: List[float] = field(default_factory=list)


@dataclass
class KickErrorSettings:
    dt2_values: List[float] = field(default_factory=list)
    t_csl_values: List[float] = field(default_factory=list)


@dataclass
class RunConfig:
    protocol: Protocol
    noise: Optional[NoiseModel]
    scan: ScanSettings
    sweep: SweepSettings
    kick_error: KickErrorSettings
    sampling: float = 0.01
    kick_mode: str = "exact"
    output_format: str = "csv"
    output_path: Optional[str] = None
    precision: int = 17
    calibrated_temperature: Optional[float] = None


class _Reader:
    def __init__(self, text: str, source: str):
        self.lines = text.splitlines()
        self.source = source

    def line_of(self, key: str) -> Optional[int]:
        pat = f'"{key}"'
        for i, ln in enumerate(self.lines, 1):
            if pat in ln:
                return i
        return None

    def fail(self, path: str, message: str):
        raise ConfigError(f"{path}: {message}", self.line_of(path.split(".")[-1]), self.source)

    def section(self, data: Dict, name: str, allowed) -> Dict:
        sub = data.get(name, {})
        if sub is None:
            sub = {}
        if not isinstance(sub, dict):
            self.fail(name, "expected an object")
        for k in sub:
            if k not in allowed:
                self.fail(f"{name}.{k}", f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return sub

    def quantity(self, value: Any, path: str, kind: str) -> float:
        if isinstance(value, bool) or not isinstance(value, str):
            self.fail(path, f"expected a string with a {kind} unit "
                            f"({', '.join(UNITS[kind])}), got {value!r}")
        m = _QUANTITY.match(value)
        if not m:
            self.fail(path, f"cannot parse quantity {value!r}; expected e.g. '35 ms'")
        num, unit = m.groups()
        if unit not in UNITS[kind]:
            self.fail(path, f"unit {unit!r} is not a {kind} unit ({', '.join(UNITS[kind])})")
        x = float(num) * UNITS[kind][unit]
        if not math.isfinite(x):
            self.fail(path, "value must be finite")
        return x

    def number(self, value: Any, path: str) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a plain number, got {value!r}")
        return float(value)

    def integer(self, value: Any, path: str) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        return value

    def quantity_list(self, value: Any, path: str, kind: str) -> List[float]:
        if isinstance(value, dict):
            allowed = {"start", "stop", "num", "log"}
            for k in value:
                if k not in allowed:
                    self.fail(f"{path}.{k}", "unknown key (allowed: log, num, start, stop)")
            try:
                start = self.quantity(value["start"], f"{path}.start", kind)
                stop = self.quantity(value["stop"], f"{path}.stop", kind)
                num = self.integer(value["num"], f"{path}.num")
            except KeyError as exc:
                self.fail(path, f"range needs {exc.args[0]!r}")
            if num < 1:
                self.fail(f"{path}.num", "must be >= 1")
            if value.get("log", False):
                if not (start > 0 and stop > 0):
                    self.fail(path, "log range needs positive bounds")
                return [10 ** (math.log10(start) + (math.log10(stop) - math.log10(start)) * i
                               / max(num - 1, 1)) for i in range(num)]
            return [start + (stop - start) * i / max(num - 1, 1) for i in range(num)]
        if not isinstance(value, list) or not value:
            self.fail(path, "expected a non-empty list or a {start, stop, num, log} range")
        return [self.quantity(v, f"{path}", kind) for v in value]


TOP_KEYS = {"protocol", "noise", "scan", "sweep", "kick_error", "simulate", "output"}
PROTOCOL_KEYS = {"dt1", "dt2", "dt3", "dt3_reference", "omega", "species", "sigma0",
                 "temperature", "calibrate", "calibrate_sigma"}
NOISE_KEYS = {"model", "lambda", "r_c", "tau", "t_csl", "boost"}
SCAN_KEYS = {"lambda", "r_c", "band", "t_csl_list", "boost_u", "displacement_limit"}
BAND_KEYS = {"mean", "sigma", "level"}
SWEEP_KEYS = {"parameter", "values"}
KICK_KEYS = {"dt2_values", "t_csl_values"}
SIM_KEYS = {"sampling", "kick_mode"}
OUTPUT_KEYS = {"format", "path", "precision"}


def _species(r: _Reader, value) -> AtomSpecies:
    if isinstance(value, str):
        if value not in SPECIES_PRESETS:
            r.fail("protocol.species", f"unknown preset {value!r} (known: {', '.join(SPECIES_PRESETS)})")
        return SPECIES_PRESETS[value]
    if isinstance(value, dict):
        for k in value:
            if k not in {"mass", "nucleon_count", "name"}:
                r.fail(f"species.{k}", "unknown key (allowed: mass, name, nucleon_count)")
        try:
            return AtomSpecies(mass=r.quantity(value.get("mass"), "species.mass", "mass"),
                               nucleon_count=r.integer(value.get("nucleon_count"),
                                                       "species.nucleon_count"),
                               name=str(value.get("name", "")))
        except DomainError as exc:
            r.fail("protocol.species", str(exc))
    r.fail("protocol.species", "expected a preset name or {mass, nucleon_count}")


def _noise(r: _Reader, sub: Dict) -> Optional[NoiseModel]:
    if not sub:
        return None
    model = sub.get("model")
    if model is None:
        r.fail("noise.model", "noise model required")
    need = {"qm": set(), "csl": {"lambda", "r_c"}, "ccsl": {"lambda", "r_c", "tau"},
            "dcsl": {"lambda", "r_c", "t_csl"}}
    if model not in need:
        r.fail("noise.model", f"unknown model {model!r} (expected qm, csl, ccsl or dcsl)")
    extra = set(sub) - need[model] - {"model"} - ({"boost"} if model == "dcsl" else set())
    if extra:
        r.fail(f"noise.{sorted(extra)[0]}", f"not a parameter of model {model!r}")
    missing = need[model] - set(sub)
    if missing:
        r.fail("noise.model", f"model {model!r} needs {', '.join(sorted(missing))}")
    try:
        if model == "qm":
            return QmOnly()
        lam = r.quantity(sub["lambda"], "noise.lambda", "rate")
        rc = r.quantity(sub["r_c"], "noise.r_c", "length")
        if model == "csl":
            return Csl(lam, rc)
        if model == "ccsl":
            return Ccsl(lam, rc, r.quantity(sub["tau"], "noise.tau", "time"))
        boost = sub.get("boost", ["0 m/s"] * 3)
        if not isinstance(boost, list) or len(boost) != 3:
            r.fail("noise.boost", "expected a list of three speeds")
        u = tuple(r.quantity(v, "noise.boost", "speed") for v in boost)
        return Dcsl(lam, rc, r.quantity(sub["t_csl"], "noise.t_csl", "temperature"), u)
    except DomainError as exc:
        r.fail("noise.model", str(exc))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, source) from None
    r = _Reader(text, source)
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", 1, source)
    for k in data:
        if k not in TOP_KEYS:
            r.fail(k, f"unknown key (allowed: {', '.join(sorted(TOP_KEYS))})")

    p = r.section(data, "protocol", PROTOCOL_KEYS)
    species = _species(r, p["species"]) if "species" in p else RB87
    kw = {}
    for key in ("dt1", "dt2", "dt3"):
        if key in p:
            kw[key] = r.quantity(p[key], f"protocol.{key}", "time")
    if "omega" in p:
        kw["omega"] = r.quantity(p["omega"], "protocol.omega", "angular")
    if "dt3_reference" in p:
        kw["dt3_reference"] = p["dt3_reference"]
    sigma0 = r.quantity(p.get("sigma0", "56 um"), "protocol.sigma0", "length")
    temp = r.quantity(p.get("temperature", "1600 pK"), "protocol.temperature", "temperature")
    try:
        initial = default_initial_moments(species, sigma0, temp)
        protocol = Protocol(species=species, initial=initial, **kw)
    except DomainError as exc:
        r.fail("protocol", str(exc))
    calibrated = None
    if p.get("calibrate", False):
        from .pipeline import calibrate_initial_temperature
        target = r.quantity(p.get("calibrate_sigma", "120 um"), "protocol.calibrate_sigma", "length")
        try:
            calibrated = calibrate_initial_temperature(protocol, target)
        except DomainError as exc:
            r.fail("protocol.calibrate", str(exc))
        protocol = replace(protocol, initial=default_initial_moments(species, sigma0, calibrated))

    noise = _noise(r, r.section(data, "noise", NOISE_KEYS))

    s = r.section(data, "scan", SCAN_KEYS)
    n = DEFAULT_GRID_POINTS
    lam_ax = (r.quantity_list(s["lambda"], "scan.lambda", "rate") if "lambda" in s else
              r.quantity_list({"start": f"{DEFAULT_LAMBDA_RANGE[0]} /s",
                               "stop": f"{DEFAULT_LAMBDA_RANGE[1]} /s", "num": n, "log": True},
                              "scan.lambda", "rate"))
    rc_ax = (r.quantity_list(s["r_c"], "scan.r_c", "length") if "r_c" in s else
             r.quantity_list({"start": f"{DEFAULT_RC_RANGE[0]} m", "stop": f"{DEFAULT_RC_RANGE[1]} m",
                              "num": n, "log": True}, "scan.r_c", "length"))
    b = s.get("band", {})
    if not isinstance(b, dict):
        r.fail("scan.band", "expected an object")
    for k in b:
        if k not in BAND_KEYS:
            r.fail(f"band.{k}", "unknown key (allowed: level, mean, sigma)")
    try:
        band = MeasurementBand(
            mean=r.quantity(b.get("mean", "120 um"), "band.mean", "length"),
            sigma=r.quantity(b.get("sigma", "40 um"), "band.sigma", "length"),
            level=r.number(b.get("level", 0.95), "band.level"))
    except DomainError as exc:
        r.fail("scan.band", str(exc))
    scan = ScanSettings(
        lam_ax, rc_ax, band,
        r.quantity_list(s["t_csl_list"], "scan.t_csl_list", "temperature") if "t_csl_list" in s else [],
        r.quantity(s["boost_u"], "scan.boost_u", "speed") if "boost_u" in s else None,
        r.quantity(s.get("displacement_limit", "1 um"), "scan.displacement_limit", "length"),
    )

    sw = r.section(data, "sweep", SWEEP_KEYS)
    param = sw.get("parameter", "dt2")
    kinds = {"dt2": "time", "t_csl": "temperature", "r_c": "length"}
    if param not in kinds:
        r.fail("sweep.parameter", f"unknown sweep parameter {param!r} (expected dt2, t_csl or r_c)")
    sweep = SweepSettings(param, r.quantity_list(sw["values"], "sweep.values", kinds[param])
                          if "values" in sw else [])

    ke = r.section(data, "kick_error", KICK_KEYS)
    kick = KickErrorSettings(
        r.quantity_list(ke["dt2_values"], "kick_error.dt2_values", "time") if "dt2_values" in ke else [],
        r.quantity_list(ke["t_csl_values"], "kick_error.t_csl_values", "temperature")
        if "t_csl_values" in ke else [],
    )

    sim = r.section(data, "simulate", SIM_KEYS)
    sampling = r.quantity(sim.get("sampling", "10 ms"), "simulate.sampling", "time")
    if not sampling > 0:
        r.fail("simulate.sampling", "must be positive")
    kick_mode = sim.get("kick_mode", "exact")
    if kick_mode not in ("exact", "analytic-qm", "numeric"):
        r.fail("simulate.kick_mode", "expected exact, analytic-qm or numeric")

    out = r.section(data, "output", OUTPUT_KEYS)
    fmt = out.get("format", "csv")
    if fmt not in ("csv", "json"):
        r.fail("output.format", "expected csv or json")
    prec = r.integer(out.get("precision", 17), "output.precision")
    if not 1 <= prec <= 17:
        r.fail("output.precision", "must lie in [1, 17]")
    path = out.get("path")
    if path is not None and not isinstance(path, str):
        r.fail("output.path", "expected a string")

    return RunConfig(protocol, noise, scan, sweep, kick, sampling, kick_mode, fmt, path, prec,
                     calibrated)


def load_config(path: Optional[str]) -> RunConfig:
    """Read a config file; ``None`` yields the built-in defaults without a noise model."""
    if path is None:
        return parse_config("", "<defaults>")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, path)
