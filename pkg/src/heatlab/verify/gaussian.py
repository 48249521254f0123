"""Two-sided Gaussian behaviour of the kernel, normalized by M and V."""
from __future__ import annotations

import math

import numpy as np

from ..adjoint import AdjointSolution, WindowError, ball_sums
from ..environment import Environment
from ..kernel import kernel_rows
from ..lattice import Box, nearest_lattice_point, sq_dist
from ..report import EstimateReport, ols

FIT_FLOOR = 1e-300
A_STEP = 0.05


def local_clt(env: Environment, ns=(1024,), x=None, target: float = 1 / math.sqrt(math.pi),
              rel_tol: float = 0.03) -> EstimateReport:
    """p_n(x, x) sqrt(n) against a limiting constant (1/sqrt(pi) for the lazy
    walk in d = 1, whose step variance is 1/2)."""
    x = tuple(int(v) for v in (x if x is not None else (0,) * env.dimension))
    rep = EstimateReport("local_clt", env.fingerprint(), grid={"x": list(x), "n": list(map(int, ns)), "target": target})
    last = None
    for n, field in kernel_rows(env, x, sorted(ns), trim_tol=0.0):
        v = field.at(x) * math.sqrt(n)
        rep.rows.append({"n": n, "scaled": v, "rel_err": abs(v - target) / target})
        last = v
    rep.constants["scaled_at_max_n"] = last
    rep.constants["rel_err"] = abs(last - target) / target
    rep.verdicts["within_tolerance"] = bool(rep.constants["rel_err"] <= rel_tol)
    return rep


def _volumes(M: AdjointSolution, r: float, box: Box) -> np.ndarray:
    return ball_sums(M.values, M.window, r, box)


def envelope_fit(env: Environment, M: AdjointSolution, ns=(64, 256), x=None, reach: float = 3.0) -> EstimateReport:
    """Fit log rho(x, y, n) against |x - y|^2 / n over |x - y| <= reach sqrt(n),
    rho = p_n(x, y) sqrt(V(x, sqrt n) V(y, sqrt n)) / M(y)."""
    x = tuple(int(v) for v in (x if x is not None else (0,) * env.dimension))
    rep = EstimateReport("gaussian_envelope_fit", env.fingerprint(),
                         grid={"x": list(x), "n": list(map(int, ns)), "reach": reach})
    xs, ys = [], []
    for n, field in kernel_rows(env, x, sorted(ns), trim_tol=0.0):
        rad = math.sqrt(n)
        half = math.floor(reach * rad)
        box = Box.around(x, half)
        try:
            Vy = _volumes(M, rad, box)
        except WindowError as exc:
            raise WindowError(f"M window too small for n={n}: {exc}") from None
        Vx = Vy[box.index(x)]
        mask = sq_dist(box, x) <= (reach * rad) ** 2
        p = field.on(box)
        rho = p * np.sqrt(Vx * Vy) / M.on(box)
        keep = mask & (rho > FIT_FLOOR)
        rep.skip("zero_kernel_in_region", int((mask & ~(rho > FIT_FLOOR)).sum()))
        xs.append((sq_dist(box, x)[keep] / n).ravel())
        ys.append(np.log(rho[keep]).ravel())
        f = ols(xs[-1], ys[-1])
        rep.rows.append(dict(f, n=n))
    fit = ols(np.concatenate(xs), np.concatenate(ys))
    rep.constants.update({"slope": fit["slope"], "intercept": fit["intercept"], "r2": fit["r2"], "points": fit["n"],
                          "slope_interval": [min(r["slope"] for r in rep.rows), max(r["slope"] for r in rep.rows)]})
    rep.verdicts["r2_at_least_0.9"] = bool(fit["r2"] >= 0.9)
    rep.verdicts["slope_in_range"] = bool(-2.0 <= fit["slope"] <= -0.125)
    return rep


def concentration(env: Environment, ns, x=None, A_max: float = 10.0) -> EstimateReport:
    """Smallest A on a grid of step 0.05 with sum over |x - y| <= A sqrt(n) of p_n(x, y) >= 1/2."""
    x = tuple(int(v) for v in (x if x is not None else (0,) * env.dimension))
    rep = EstimateReport("concentration", env.fingerprint(), grid={"x": list(x), "n": list(map(int, ns)), "A_step": A_STEP})
    grid = np.round(np.arange(1, int(round(A_max / A_STEP)) + 1) * A_STEP, 10)
    As = []
    for n, field in kernel_rows(env, x, sorted(ns), trim_tol=0.0):
        d2 = sq_dist(field.box, x).ravel()
        vals = field.values.ravel()
        order = np.argsort(d2, kind="stable")
        cum = np.cumsum(vals[order])
        d2s = d2[order]
        A = None
        for a in grid:
            i = int(np.searchsorted(d2s, (a * a) * n, side="right"))
            if i > 0 and cum[i - 1] >= 0.5:
                A = float(a)
                break
        As.append(A)
        rep.rows.append({"n": n, "A": A})
    big = [(n, a) for n, a in zip(sorted(ns), As) if n >= 64]
    rep.constants["A_max"] = max(a for _, a in big) if big and all(a is not None for _, a in big) else None
    rep.verdicts["finite"] = all(a is not None for a in As)
    rep.verdicts["A_at_most_4"] = bool(rep.constants["A_max"] is not None and rep.constants["A_max"] <= 4.0)
    mono = all(b <= a + A_STEP + 1e-9 for (_, a), (_, b) in zip(big, big[1:])) if rep.verdicts["finite"] else False
    rep.verdicts["nonincreasing_beyond_64"] = bool(mono)
    return rep


def on_diagonal(env: Environment, M: AdjointSolution, ns, x=None, factor: float = 2.0) -> EstimateReport:
    """p_n(x, x) V(x, sqrt n) / M(x) across n."""
    x = tuple(int(v) for v in (x if x is not None else (0,) * env.dimension))
    rep = EstimateReport("on_diagonal", env.fingerprint(), grid={"x": list(x), "n": list(map(int, ns))})
    vals = []
    for n, field in kernel_rows(env, x, sorted(ns), trim_tol=0.0):
        V = float(_volumes(M, math.sqrt(n), Box(x, x)).ravel()[0])
        v = field.at(x) * V / M.at(x)
        vals.append(v)
        rep.rows.append({"n": n, "ratio": v, "V": V})
    rep.constants["min"] = min(vals)
    rep.constants["max"] = max(vals)
    rep.constants["spread"] = max(vals) / min(vals)
    rep.verdicts["within_factor"] = bool(max(vals) / min(vals) <= factor)
    return rep


def chaining(env: Environment, M: AdjointSolution, x, y, n: int) -> EstimateReport:
    """Walk the normalized adjoint solution along waypoints (a_j, t_j) from
    (x, n) to (y, 2n) and record the step ratios."""
    x = tuple(int(v) for v in x)
    y = tuple(int(v) for v in y)
    dist2 = float(np.sum((np.subtract(y, x)) ** 2))
    k = max(1, math.ceil(dist2 / n))
    pts = [x] + [nearest_lattice_point(np.add(x, np.multiply(j / k, np.subtract(y, x)))) for j in range(1, k)] + [y]
    times = [round((1 + j / k) * n) for j in range(k + 1)]
    vals = {}
    want = {t: [] for t in times}
    for j, t in enumerate(times):
        want[t].append(j)
    for t, field in kernel_rows(env, x, sorted(set(times)), trim_tol=0.0):
        for j in want[t]:
            vals[j] = field.at(pts[j]) / M.at(pts[j])
    v = [vals[j] for j in range(k + 1)]
    steps = [v[j + 1] / v[j] for j in range(k)]
    rep = EstimateReport("chaining", env.fingerprint(), grid={"x": list(x), "y": list(y), "n": n, "k": k})
    rep.rows = [{"j": j, "a": list(pts[j]), "t": times[j], "v": v[j]} for j in range(k + 1)]
    rep.constants["min_step_ratio"] = min(steps)
    rep.constants["per_step_log"] = math.log(v[-1] / v[0]) / k
    rep.constants["end_to_start"] = v[-1] / v[0]
    rep.verdicts["positive"] = bool(all(val > 0 for val in v))
    return rep


def gaussian_envelope(env: Environment, M: AdjointSolution, *, fit_ns=(64, 256), diag_ns=(16, 32, 64, 128, 256, 512, 1024),
                      conc_ns=(16, 32, 64, 128, 256, 512, 1024), x=None) -> list[EstimateReport]:
    """All envelope checks for one environment."""
    return [envelope_fit(env, M, fit_ns, x), concentration(env, conc_ns, x), on_diagonal(env, M, diag_ns, x)]
