"""Doubling of volumes, local adjoint solutions, Green sums and heat mass."""
from __future__ import annotations

import math

import numpy as np

from ..adjoint import AdjointSolution, ball_sums, doubling_report, green_adjoint
from ..environment import Environment
from ..kernel import KilledWalk
from ..lattice import Ball, Box, Domain
from ..potential import green_solver
from ..report import EstimateReport, stable

RADII = (8, 16, 32)


def _scaled(rep: EstimateReport, per_r, radii, factor, key="C"):
    rep.constants[key] = max(per_r) if key == "C" else min(per_r)
    rep.constants["per_radius"] = list(per_r)
    rep.verdicts["finite"] = bool(np.all(np.isfinite(per_r)) and np.all(np.asarray(per_r) > 0))
    rep.verdicts["scale_stable"] = stable(per_r, factor)
    return rep


def volume_doubling(env: Environment, M: AdjointSolution, radii=RADII, centers: Box | int | None = None,
                    factor: float = 2.0) -> EstimateReport:
    """max over centers of V(x, 2r) / V(x, r); ``centers`` is a box or a half-width around 0."""
    if not isinstance(centers, Box):
        centers = Box.around((0,) * env.dimension, 16 if centers is None else int(centers))
    rep = doubling_report(env, M, centers, radii)
    return _scaled(rep, rep.constants["per_radius"], radii, factor)


def _ball_sum(values: np.ndarray, box: Box, center, r: float) -> float:
    return float(ball_sums(values, box, r, Box(tuple(center), tuple(center)))[(0,) * box.dim])


def adjoint_doubling(env: Environment, M: AdjointSolution | None = None, radii=RADII, centers=None,
                     factor: float = 2.0) -> EstimateReport:
    """sum over B_2r(z) of m against sum over B_r(z) of m, for the local
    solutions m = G(x*, .) of B_7r(z) with x* in B_6r(z) minus B_5r(z),
    and for the global M when given."""
    d = env.dimension
    centers = centers or [(0,) * d, (5,) + (0,) * (d - 1), (0,) * (d - 1) + (-7,) if d > 1 else (-7,)]
    rep = EstimateReport("adjoint_doubling", env.fingerprint(),
                         grid={"radii": [float(r) for r in radii], "centers": [list(c) for c in centers]})
    per_r = []
    for r in radii:
        worst = 0.0
        for z in centers:
            loc = green_adjoint(env, z, 5 * r, 6 * r, 7 * r)
            ratio = _ball_sum(loc.values, loc.box, z, 2 * r) / _ball_sum(loc.values, loc.box, z, r)
            rep.rows.append({"r": float(r), "z": list(z), "pole": list(loc.pole), "kind": "local", "ratio": ratio})
            worst = max(worst, ratio)
            if M is not None and M.window.contains_box(Ball(z, 2 * r).box):
                rg = _ball_sum(M.values, M.window, z, 2 * r) / _ball_sum(M.values, M.window, z, r)
                rep.rows.append({"r": float(r), "z": list(z), "kind": "global", "ratio": rg})
                worst = max(worst, rg)
        per_r.append(worst)
    return _scaled(rep, per_r, radii, factor)


def _indicator_sums(env: Environment, ball: Ball, inner: Ball):
    """s(x) = sum over y in ``inner`` of G(x, y) for every x of ``ball``."""
    solver = green_solver(env, ball)
    dom = solver.domain
    return solver.apply(inner.mask(dom.box).astype(float)), dom.box, dom.mask


def green_doubling(env: Environment, radii=RADII, x0=None, factor: float = 2.0) -> EstimateReport:
    """max over x in B_4R(x0) of sum_{B_2r} G^R(x, .) / sum_{B_r} G^R(x, .) with R = 2r."""
    x0 = tuple(int(v) for v in (x0 if x0 is not None else (0,) * env.dimension))
    rep = EstimateReport("green_doubling", env.fingerprint(), grid={"radii": [float(r) for r in radii], "x0": list(x0)})
    per_r = []
    for r in radii:
        R = 2 * r
        big = Ball(x0, 4 * R)
        s2, box, mask = _indicator_sums(env, big, Ball(x0, 2 * r))
        s1, _, _ = _indicator_sums(env, big, Ball(x0, r))
        ratio = np.where(mask, s2 / np.where(mask, s1, 1.0), 0.0)
        i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
        per_r.append(float(ratio[i]))
        rep.rows.append({"r": float(r), "R": float(R), "max_ratio": float(ratio[i]),
                         "argmax": [int(a + b) for a, b in zip(i, box.lo)]})
    return _scaled(rep, per_r, radii, factor)


def heat_mass(env: Environment, radii=RADII, x0=None, factor: float = 2.0) -> EstimateReport:
    """c = min over z in B_r(x0) and 1 <= s <= r^2 of sum_{y in B_2r(x0)} h_s^R(z, y),
    h^R the kernel killed outside B_4R(x0), R = 2r."""
    x0 = tuple(int(v) for v in (x0 if x0 is not None else (0,) * env.dimension))
    rep = EstimateReport("heat_mass", env.fingerprint(), grid={"radii": [float(r) for r in radii], "x0": list(x0)})
    per_r = []
    for r in radii:
        walk = KilledWalk(env, Domain.from_ball(Ball(x0, 8 * r), env.gamma.reach_int))
        u = np.where(walk.mask, Ball(x0, 2 * r).mask(walk.box), False).astype(float)
        zmask = Ball(x0, r).mask(walk.box)
        best, where = np.inf, None
        for s in range(1, math.floor(r * r) + 1):
            u = walk.backward(u)
            v = u[zmask]
            i = int(np.argmin(v))
            if v[i] < best:
                best, where = float(v[i]), s
        per_r.append(best)
        rep.rows.append({"r": float(r), "c": best, "time": where})
    return _scaled(rep, per_r, radii, factor, key="c")


def doubling_suite(env: Environment, M: AdjointSolution, radii=RADII, factor: float = 2.0) -> list[EstimateReport]:
    return [volume_doubling(env, M, radii, factor=factor), adjoint_doubling(env, M, radii, factor=factor),
            green_doubling(env, radii, factor=factor), heat_mass(env, radii, factor=factor)]
