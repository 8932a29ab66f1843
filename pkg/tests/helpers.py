"""Shared fixtures for comparing closed-form propagators with the RK4 oracle."""

import math

import numpy as np

from collapsebounds.ccsl import ccsl_free_moments, ccsl_harmonic_moments
from collapsebounds.core import RB87, Ccsl, Csl, Dcsl, GasMoments, Protocol
from collapsebounds.csl import csl_free_step, csl_harmonic_step
from collapsebounds.dcsl import dcsl_free_step, dcsl_harmonic_step
from collapsebounds.oracle import ccsl_system, csl_system, dcsl_system, rk4_array

PROTOCOL = Protocol()


def rel_dev(a, b):
    """Relative deviation per moment; xp_sym is scaled by sqrt(x2 p2)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = np.array([abs(b[0]), math.sqrt(abs(b[0] * b[2])), abs(b[2])])
    return np.abs(a - b) / scale


def random_tuples(n, seed):
    rng = np.random.default_rng(seed)
    return dict(
        lam=10 ** rng.uniform(-20, -3, n),
        r_c=10 ** rng.uniform(-9, -3, n),
        t_csl=10 ** rng.uniform(-12, 6, n),
        tau=10 ** rng.uniform(-6, -1, n),
    )


def _stage_runs(family, p):
    """Closed-form stage sequence per tuple; returns (inputs, outputs) per stage."""
    n = p["lam"].size
    sp, w = RB87, PROTOCOL.omega
    stages = {"free1": ([], []), "kick": ([], []), "free2": ([], [])}
    for i in range(n):
        if family == "csl":
            noise = Csl(p["lam"][i], p["r_c"][i])
            free = lambda m, t: csl_free_step(m, noise, sp, t)
            kick = lambda m, t: csl_harmonic_step(m, noise, sp, w, t)
        elif family == "dcsl":
            noise = Dcsl(p["lam"][i], p["r_c"][i], p["t_csl"][i])
            free = lambda m, t: dcsl_free_step(m, noise, sp, t)
            kick = lambda m, t: dcsl_harmonic_step(m, noise, sp, w, t, mode="exact")
        else:
            noise = Ccsl(p["lam"][i], p["r_c"][i], p["tau"][i])
            free = lambda m, t: ccsl_free_moments(m, noise, sp, t)
            kick = lambda m, t: ccsl_harmonic_moments(m, noise, sp, w, t)
        m = PROTOCOL.initial
        for name, dur, prop in (("free1", PROTOCOL.dt1, free), ("kick", PROTOCOL.dt2, kick),
                                ("free2", PROTOCOL.dt3, free)):
            out = prop(m, dur)
            stages[name][0].append(m.second())
            stages[name][1].append(out.second())
            m = out
    return stages


def _system(family, p, omega):
    if family == "csl":
        return csl_system(p["lam"], p["r_c"], RB87, omega)
    if family == "dcsl":
        return dcsl_system(p["lam"], p["r_c"], p["t_csl"], RB87, omega)
    return ccsl_system(p["lam"], p["r_c"], p["tau"], RB87, omega)


def oracle_deviation(family, p, step=None):
    """Largest relative deviation per stage between closed form and RK4.

    Each stage is integrated from the closed-form state at its start, so the
    comparison isolates one propagator over one stage duration. ``step``
    defaults to the oracle's own choice.
    """
    stages = _stage_runs(family, p)
    out = {}
    for name, dur, omega in (("free1", PROTOCOL.dt1, 0.0), ("kick", PROTOCOL.dt2, PROTOCOL.omega),
                             ("free2", PROTOCOL.dt3, 0.0)):
        y0 = np.array(stages[name][0]).T
        ref = rk4_array(_system(family, p, omega), y0, dur, step)
        closed = np.array(stages[name][1]).T
        out[name] = max(float(np.max(rel_dev(closed[:, j], ref[:, j])))
                        for j in range(y0.shape[1]))
    return out


def start_state():
    return GasMoments(x2=PROTOCOL.initial.x2, p2=PROTOCOL.initial.p2)
