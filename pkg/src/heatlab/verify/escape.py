"""Tail mass of the walk outside balls."""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar

from ..environment import Environment
from ..kernel import kernel_rows
from ..lattice import sq_dist
from ..report import EstimateReport, ols

FIT_FLOOR = 1e-300


def tail_masses(env: Environment, x, ns, radii_for) -> dict:
    """T(n, R) = sum over |y - x| > R of p_n(x, y), exact (no trimming).

    ``radii_for(n)`` lists the radii tested at time n.
    """
    x = tuple(int(v) for v in x)
    out = {}
    for n, field in kernel_rows(env, x, sorted(set(ns)), trim_tol=0.0):
        d2 = sq_dist(field.box, x).ravel()
        order = np.argsort(d2, kind="stable")
        d2s = d2[order]
        cum = np.cumsum(field.values.ravel()[order][::-1])[::-1]  # mass at index >= i
        cum = np.append(cum, 0.0)
        for R in radii_for(n):
            i = int(np.searchsorted(d2s, R * R, side="right"))
            out[(n, float(R))] = float(cum[i]) + field.escaped + field.dropped
    return out


def chernoff_bound(env: Environment, n: int, R: float) -> float:
    """Upper bound on P[|S_n - x| > R] from the one-step moment generating
    function, maximized over site classes, and a union over coordinates."""
    d = env.dimension
    rows = np.asarray(env.class_rows(), dtype=float)
    inc = np.asarray(env.increments, dtype=float)
    thr = R / math.sqrt(d)
    total = 0.0
    for i in range(d):
        for sign in (1.0, -1.0):
            def logb(s, i=i, sign=sign):
                psi = np.log(np.max(rows @ np.exp(s * sign * inc[:, i])))
                return -s * thr + n * psi

            res = minimize_scalar(logb, bounds=(0.0, 50.0), method="bounded")
            total += math.exp(min(0.0, float(res.fun)))
    return min(1.0, total)


def mass_escape(env: Environment, x=None, ns=(64, 128, 256), radius_steps=8, fit_max_sigma: float = 4.0,
                r2_min: float = 0.95) -> EstimateReport:
    """Exact tails on a grid of (n, R), a fit of log T against R^2/n and the
    zero-tail and Chernoff checks."""
    x = tuple(int(v) for v in (x if x is not None else (0,) * env.dimension))
    diam = env.gamma.diam

    def radii(n):
        fit = [j * math.sqrt(n) * fit_max_sigma / radius_steps for j in range(1, radius_steps + 1)]
        beyond = [n * diam, n * diam + 0.5, n * diam + 1]
        return fit + beyond

    T = tail_masses(env, x, ns, radii)
    rep = EstimateReport("mass_escape", env.fingerprint(),
                         grid={"x": list(x), "n": list(map(int, ns)), "radius_steps": radius_steps,
                               "fit_max_sigma": fit_max_sigma})
    xs, ys = [], []
    zero_ok = True
    cher_ok = True
    for (n, R), t in sorted(T.items()):
        beyond = R > n * diam
        bound = chernoff_bound(env, n, R)
        rep.rows.append({"n": n, "R": R, "T": t, "chernoff": bound, "beyond_reach": beyond})
        if beyond:
            zero_ok &= t == 0.0
            continue
        cher_ok &= t <= bound * (1 + 1e-9) + 1e-300
        if t > FIT_FLOOR:
            xs.append(R * R / n)
            ys.append(math.log(t))
        else:
            rep.skip("below_fit_floor")
    fit = ols(xs, ys)
    rep.constants.update({"c": -fit["slope"], "C": math.exp(fit["intercept"]) if np.isfinite(fit["intercept"]) else float("nan"),
                          "r2": fit["r2"], "points": fit["n"]})
    rep.verdicts["zero_beyond_reach"] = bool(zero_ok)
    rep.verdicts["below_chernoff"] = bool(cher_ok)
    rep.verdicts["c_positive"] = bool(fit["slope"] < 0)
    rep.verdicts["fit_r2"] = bool(fit["r2"] >= r2_min)
    return rep
