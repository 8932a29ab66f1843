"""Command-line interface.

Subcommands: simulate, scan, kick-error, boost-bound, sweep. Exit codes are
0 on success, 2 for configuration errors and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .ccsl import QuadratureError
from .config import ENV_VAR, ConfigError, RunConfig, load_config
from .core import Csl, Dcsl, DomainError, NoiseModel, QmOnly
from .dcsl import UnboundedVelocityError, boost_velocity_bound, dcsl_free_step, dcsl_rates
from .exclusion import (ExclusionGrid, InconsistentProtocolError, analytic_csl_bound,
                        boost_exclusion, scan_exclusion)
from .kick_error import kick_error_bounds
from .oracle import OracleError, rk4_samples, system_for
from .pipeline import (StageError, run_protocol, sweep_kick_time, sweep_noise_temperature,
                       sweep_rc, temperature_from_energy)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

CONVENTIONS = [
    ("units", "SI"),
    ("moments", "x2, p2 are 3D totals; xp_sym = <x.p + p.x>"),
    ("sigma_x", "single-axis spread sqrt(x2/3)"),
    ("temperature", "T = 2E/(3 k_B), E = p2/(2m)"),
]


# -- formatting


def fmt_value(v, precision: int) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), f".{precision}g")
    return str(v)


def _json_value(v, precision: int) -> str:
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json_value(x, precision)}"
                               for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_json_value(x, precision) for x in v) + "]"
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "null" if not math.isfinite(v) else format(float(v), f".{precision}g")
    return json.dumps(str(v))


class Table:
    """Header metadata plus rows, written as CSV or JSON."""

    def __init__(self, columns: Sequence[str], meta: Optional[List] = None):
        self.columns = list(columns)
        self.rows: List[list] = []
        self.meta = list(meta or [])

    def add(self, *values):
        self.rows.append(list(values))

    def to_csv(self, precision: int) -> str:
        buf = io.StringIO()
        for k, v in self.meta:
            buf.write(f"# {k} = {fmt_value(v, precision)}\n")
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(fmt_value(v, precision) for v in row) + "\n")
        return buf.getvalue()

    def as_obj(self) -> dict:
        return {"meta": {k: v for k, v in self.meta},
                "rows": [dict(zip(self.columns, r)) for r in self.rows]}


def write_outputs(tables: Dict[str, Table], cfg: RunConfig, out: Optional[str], fmt: str):
    """Write one table per output; the first goes to ``out`` (or stdout)."""
    prec = cfg.precision
    names = list(tables)
    if fmt == "json":
        obj = {n: tables[n].as_obj() for n in names}
        text = _json_value(obj if len(names) > 1 else obj[names[0]], prec) + "\n"
        _emit(text, out)
        return
    for i, name in enumerate(names):
        text = tables[name].to_csv(prec)
        if i == 0:
            _emit(text, out)
        elif out is not None:
            p = Path(out)
            _emit(text, str(p.with_name(f"{p.stem}_{name}{p.suffix or '.csv'}")))
        else:
            _emit(f"\n# table {name}\n" + text, None)


def _emit(text: str, path: Optional[str]):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


# -- metadata


def _noise_meta(noise: NoiseModel) -> list:
    out = [("noise.model", noise.family)]
    for attr, key in (("lam", "noise.lambda_per_s"), ("r_c", "noise.r_c_m"),
                      ("tau", "noise.tau_s"), ("t_csl", "noise.t_csl_K")):
        if hasattr(noise, attr):
            out.append((key, getattr(noise, attr)))
    if isinstance(noise, Dcsl):
        out += [(f"noise.boost_{ax}_m_per_s", u) for ax, u in zip("xyz", noise.boost)]
    return out


def _protocol_meta(cfg: RunConfig) -> list:
    p = cfg.protocol
    meta = [("protocol.dt1_s", p.dt1), ("protocol.dt2_s", p.dt2), ("protocol.dt3_s", p.dt3),
            ("protocol.dt3_reference", p.dt3_reference), ("protocol.detection_time_s", p.t3),
            ("protocol.omega_rad_per_s", p.omega), ("species.name", p.species.name),
            ("species.mass_kg", p.species.mass), ("species.nucleon_count", p.species.nucleon_count),
            ("initial.x2_m2", p.initial.x2), ("initial.p2_kg2m2_per_s2", p.initial.p2),
            ("initial.xp_sym_Js", p.initial.xp_sym)]
    if cfg.calibrated_temperature is not None:
        meta.append(("initial.calibrated_temperature_K", cfg.calibrated_temperature))
    return meta + [(f"convention.{k}", v) for k, v in CONVENTIONS]


def _require_noise(cfg: RunConfig, kinds=None) -> NoiseModel:
    if cfg.noise is None:
        raise ConfigError("noise model required", None, "<config>")
    if kinds and not isinstance(cfg.noise, kinds):
        names = "/".join(k.family for k in kinds)
        raise ConfigError(f"this subcommand needs a {names} noise block, got {cfg.noise.family}")
    return cfg.noise


# -- subcommands


def _oracle_trajectory(cfg: RunConfig, noise: NoiseModel, times: Sequence[float]) -> np.ndarray:
    """RK4 integration of the moment equations, sampled at ``times``."""
    p = cfg.protocol
    times = np.asarray(times, float)
    out = np.empty((times.size, 3))
    out[0] = y = p.initial.second()
    for t0, t1, w in ((0.0, p.t1, 0.0), (p.t1, p.t2, p.omega), (p.t2, p.t3, 0.0)):
        if t1 <= t0:
            continue
        idx = np.flatnonzero((times > t0) & (times <= t1))
        local = np.append(times[idx] - t0, t1 - t0)
        states = rk4_samples(system_for(noise, p.species, w), y, local)
        out[idx] = states[:-1]
        y = states[-1]
    return out


def cmd_simulate(cfg: RunConfig, args) -> Dict[str, Table]:
    noise = _require_noise(cfg)
    rec = run_protocol(cfg.protocol, noise, cfg.sampling, cfg.kick_mode)
    cols = ["t_s", "stage", "x2_m2", "p2_kg2m2_per_s2", "xp_sym_Js", "sigma_x_per_axis_m",
            "energy_J", "temperature_K"]
    if args.oracle:
        cols += ["x2_rk4", "p2_rk4", "xp_sym_rk4"]
        orc = _oracle_trajectory(cfg, noise, rec.times)
    meta = _protocol_meta(cfg) + _noise_meta(noise) + [
        ("simulate.sampling_s", cfg.sampling), ("simulate.kick_mode", cfg.kick_mode),
        ("final.sigma_x_per_axis_m", rec.final_sigma_x), ("final.energy_J", rec.final_energy),
        ("final.temperature_K", rec.final_temperature)]
    tab = Table(cols, meta)
    m = cfg.protocol.species.mass
    for i, (t, s, mo) in enumerate(zip(rec.times, rec.stages, rec.moments)):
        e = mo.p2 / (2.0 * m)
        row = [t, s, mo.x2, mo.p2, mo.xp_sym, mo.sigma_x, e, temperature_from_energy(e)]
        if args.oracle:
            row += [orc[i][0], orc[i][2], orc[i][1]]
        tab.add(*row)
    return {"trajectory": tab}


def _grid_table(grid: ExclusionGrid, meta) -> Table:
    tab = Table(["lambda_per_s", "r_c_m", grid.value_name, "verdict"], meta)
    for i, rc in enumerate(grid.rc_axis):
        for j, lam in enumerate(grid.lambda_axis):
            verdict = ("failed" if grid.failed[i, j] else
                       "excluded" if grid.excluded[i, j] else "allowed")
            tab.add(float(lam), float(rc), float(grid.values[i, j]), verdict)
    return tab


def _boundary_table(grid: ExclusionGrid, meta) -> Table:
    tab = Table(["r_c_m", "lambda_boundary_per_s"], meta)
    for rc, lam in grid.boundary():
        tab.add(rc, lam)
    return tab


def cmd_scan(cfg: RunConfig, args) -> Dict[str, Table]:
    noise = cfg.noise if cfg.noise is not None else Csl(1.0, 1.0)
    if isinstance(noise, QmOnly):
        raise ConfigError("scan needs a csl, ccsl or dcsl noise template")
    sc = cfg.scan
    lo, hi = sc.band.interval
    meta = _protocol_meta(cfg) + _noise_meta(noise) + [
        ("band.mean_m", sc.band.mean), ("band.sigma_m", sc.band.sigma),
        ("band.level", sc.band.level), ("band.lo_m", lo), ("band.hi_m", hi)]
    if isinstance(noise, Dcsl) and sc.boost_u is not None:
        temps = sc.t_csl_list or [noise.t_csl]
        grids = boost_exclusion(cfg.protocol, temps, sc.boost_u, sc.lambda_axis, sc.rc_axis,
                                sc.displacement_limit)
        tables = {}
        for T, g in grids.items():
            m2 = meta + [("boost.u_m_per_s", sc.boost_u), ("boost.t_csl_K", T),
                         ("boost.displacement_limit_m", sc.displacement_limit)]
            tables[f"grid_T{fmt_value(T, 6)}"] = _grid_table(g, m2)
            tables[f"boundary_T{fmt_value(T, 6)}"] = _boundary_table(g, m2)
        return tables
    if isinstance(noise, Csl):
        try:
            K, limit = analytic_csl_bound(cfg.protocol, sc.band)
            meta += [("analytic.K_m4s", K), ("analytic.limit_per_m2s", limit)]
        except InconsistentProtocolError as exc:
            meta.append(("analytic.warning", str(exc)))
    temps = sc.t_csl_list if isinstance(noise, Dcsl) and sc.t_csl_list else [None]
    tables = {}
    for T in temps:
        tmpl = noise if T is None else replace(noise, t_csl=T)
        g = scan_exclusion(cfg.protocol, tmpl, sc.lambda_axis, sc.rc_axis, sc.band,
                           args.workers, cfg.kick_mode)
        m2 = meta if T is None else meta + [("scan.t_csl_K", T)]
        suffix = "" if T is None else f"_T{fmt_value(T, 6)}"
        tables[f"grid{suffix}"] = _grid_table(g, m2)
        tables[f"boundary{suffix}"] = _boundary_table(g, m2)
    return tables


def _eig_cols():
    return [f"eig{i}_{part}" for i in (1, 2, 3) for part in ("re", "im")]


def cmd_kick_error(cfg: RunConfig, args) -> Dict[str, Table]:
    noise = _require_noise(cfg, (Dcsl,))
    p = cfg.protocol
    dt2_vals = cfg.kick_error.dt2_values or [p.dt2]
    t_vals = cfg.kick_error.t_csl_values or [noise.t_csl]
    cols = ["sweep", "dt2_s", "t_csl_K", "err_x2", "err_xp", "err_p2", "indeterminate",
            "norm_bound_ok"] + _eig_cols()
    tab = Table(cols, _protocol_meta(cfg) + _noise_meta(noise))

    def add(kind, dt2, T):
        n = replace(noise, t_csl=T)
        st = dcsl_free_step(p.initial, n, p.species, p.dt1)
        rep = kick_error_bounds(st, n, p.species, p.omega, dt2)
        eig = [x for z in rep.eigenvalues for x in (z.real, z.imag)]
        tab.add(kind, dt2, T, *rep.errors, any(rep.indeterminate), rep.norm_bound_ok, *eig)

    for d in dt2_vals:
        add("dt2", d, noise.t_csl)
    for T in t_vals:
        add("t_csl", p.dt2, T)
    return {"kick_error": tab}


def cmd_boost_bound(cfg: RunConfig, args) -> Dict[str, Table]:
    noise = _require_noise(cfg, (Dcsl,))
    p = cfg.protocol
    limit = cfg.scan.displacement_limit
    t_total = p.t3
    B = dcsl_rates(noise, p.species).big_b
    try:
        u = boost_velocity_bound(noise, p.species, t_total, limit)
    except UnboundedVelocityError:
        u = math.inf
    tab = Table(["lambda_per_s", "r_c_m", "t_csl_K", "B_per_s", "t_total_s",
                 "displacement_limit_m", "u_max_m_per_s"], _protocol_meta(cfg) + _noise_meta(noise))
    tab.add(noise.lam, noise.r_c, noise.t_csl, B, t_total, limit, u)
    return {"boost_bound": tab}


def cmd_sweep(cfg: RunConfig, args) -> Dict[str, Table]:
    noise = _require_noise(cfg)
    sw = cfg.sweep
    if not sw.values:
        raise ConfigError("sweep.values required for the sweep subcommand")
    if sw.parameter == "dt2":
        rows = sweep_kick_time(cfg.protocol, noise, sw.values, args.workers, cfg.kick_mode)
    elif sw.parameter == "t_csl":
        if not isinstance(noise, Dcsl):
            raise ConfigError("a t_csl sweep needs a dcsl noise block")
        rows = sweep_noise_temperature(cfg.protocol, noise, sw.values, args.workers, cfg.kick_mode)
    else:
        if isinstance(noise, QmOnly):
            raise ConfigError("an r_c sweep needs a collapse-model noise block")
        rows = sweep_rc(cfg.protocol, noise, sw.values, args.workers, cfg.kick_mode)
    tab = Table([sw.parameter, "sigma_x_per_axis_m", "energy_J", "temperature_K", "error"],
                _protocol_meta(cfg) + _noise_meta(noise))
    for r in rows:
        tab.add(r.parameter, r.sigma_x, r.energy, temperature_from_energy(r.energy), r.error)
    return {"sweep": tab}


COMMANDS = {"simulate": cmd_simulate, "scan": cmd_scan, "kick-error": cmd_kick_error,
            "boost-bound": cmd_boost_bound, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="collapsebounds",
                                 description="Collapse-model predictions for delta-kick cooled atom clouds.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config file (default: ${ENV_VAR})")
    common.add_argument("--out", help="output file (default: stdout or output.path)")
    common.add_argument("--format", choices=("csv", "json"), help="output format")
    common.add_argument("--workers", type=int, default=1, help="worker processes for grids/sweeps")
    common.add_argument("--oracle", action="store_true", help="add RK4 cross-check columns")
    common.add_argument("--precision", type=int, help="significant digits (default 17)")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    path = args.config or os.environ.get(ENV_VAR)
    try:
        cfg = load_config(path)
        if args.precision is not None:
            if not 1 <= args.precision <= 17:
                raise ConfigError("--precision must lie in [1, 17]")
            cfg = replace(cfg, precision=args.precision)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        tables = COMMANDS[args.command](cfg, args)
        write_outputs(tables, cfg, args.out or cfg.output_path, args.format or cfg.output_format)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, QuadratureError, OracleError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
