"""Behaviour of caloric functions near the boundary of a ball domain.

The domain is Omega = B_R0(y0) with a boundary point y of its Gamma-boundary
and reference time s = 0.  Every check works in time indices ``k - a`` of
the cylinder it solves on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..environment import Environment
from ..kernel import DomainError, KilledWalk
from ..lattice import Ball, Box, Cylinder, Domain, distance_to_set
from ..potential import caloric_measure, solve_caloric
from ..report import EstimateReport
from .common import (
    N_RANDOM,
    ball_boundary_on,
    boundary_point,
    build_family,
    evolve_caloric,
    r_min,
    shifted_point,
    sq,
)

KINDS = ("carleson", "caloric_lower", "decay", "exit_split", "comparability", "shift_monotone")


@dataclass
class Geometry:
    """Omega = B_R0(y0) and a point y of its boundary."""

    env: Environment
    R0: float
    y0: tuple
    y: tuple

    @classmethod
    def make(cls, env: Environment, R0: float = 32.0, y0=None, y=None, direction=None) -> Geometry:
        y0 = tuple(int(v) for v in (y0 if y0 is not None else (0,) * env.dimension))
        omega = Ball(y0, R0)
        if y is None:
            y = boundary_point(env, y0, R0, direction)
        y = tuple(int(v) for v in y)
        if omega.contains(y) or not any(omega.contains(np.subtract(y, e)) for e in env.increments):
            raise DomainError(f"{y} is not on the boundary of B_{R0:g}({y0})")
        return cls(env, float(R0), y0, y)

    @property
    def omega(self) -> Ball:
        return Ball(self.y0, self.R0)

    def domain(self, radius: float, label: str) -> Domain:
        """Omega intersected with B_radius(y), padded for the walk."""
        pad = self.env.gamma.reach_int
        box = self.omega.box.grow(pad + 1).intersect(Ball(self.y, radius).box.grow(pad + 1))
        mask = self.omega.mask(box) & Ball(self.y, radius).mask(box)
        if not mask.any():
            raise DomainError(f"{label}: empty region")
        return Domain.from_mask(box, mask, pad, label=label)

    def d_omega(self, box: Box) -> np.ndarray:
        return ball_boundary_on(self.env, self.omega, box)

    def q_mask(self, box: Box, r: float) -> np.ndarray:
        """Spatial part of Q_r(Y)."""
        return self.omega.mask(box) & Ball(self.y, r).mask(box)

    def grid(self) -> dict:
        return {"R0": self.R0, "y0": list(self.y0), "y": list(self.y)}


def _report(name: str, geo: Geometry, r: float, **extra) -> EstimateReport:
    rep = EstimateReport(name, geo.env.fingerprint(), grid=dict(geo.grid(), r=float(r), **extra))
    rep.grid["regime"] = "below_threshold" if r < r_min(geo.env) else "asymptotic"
    return rep


def _times(s: int, a: int, lo: float, hi: float) -> list[int]:
    """Time indices of integer k with lo <= k - s <= hi."""
    return [k - a for k in range(s + math.ceil(lo), s + math.floor(hi) + 1)]


def _vanishing(geo: Geometry, walk: KilledWalk, H: int, a: int, radius: float, half_window: float, s: int = 0):
    """(H+1, *box) mask of boundary points of Omega in B_radius(y) with |k - s| <= half_window."""
    near = geo.d_omega(walk.box) & Ball(geo.y, radius).mask(walk.box)
    zero = np.zeros((H + 1,) + walk.box.shape, dtype=bool)
    for k in range(H + 1):
        if abs(a + k - s) <= half_window:
            zero[k] = near
    return zero


# -- caloric measure lower bound -----------------------------------------------------


def caloric_lower(env: Environment, r: float = 4.0, geo: Geometry | None = None) -> EstimateReport:
    """theta = inf over Q_r(Y) of the caloric measure of Q_2r(Y) charging Delta_2r(Y)."""
    geo = geo or Geometry.make(env)
    s, a = 0, -math.ceil(4 * r * r)
    H = s - a
    dom = geo.domain(2 * r, "Q_2r")
    cyl = Cylinder(dom, a, s)
    walk = KilledWalk(env, dom)
    delta = geo.d_omega(dom.box) & Ball(geo.y, 2 * r).mask(dom.box)
    phi = np.zeros((H + 1,) + dom.box.shape)
    phi[:, delta] = 1.0  # every k in [s - 4r^2, s]
    u = solve_caloric(env, cyl, phi)
    q = geo.q_mask(dom.box, r) & walk.mask
    rep = _report("boundary_caloric_lower", geo, r, height=H)
    if not q.any():
        raise DomainError("Q_r(Y) is empty")
    best, where = np.inf, None
    for k in _times(s, a, -r * r, 0):
        if k == 0:
            continue  # the bottom slice is boundary, not interior
        vals = u[k][q]
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, where = float(vals[i]), (k + a, [int(v) for v in np.argwhere(q)[i] + dom.box.lo])
    rep.constants["theta"] = best
    rep.witness = {"time": where[0], "point": where[1]}
    # one exact caloric measure at the witness cross-checks the solve
    om = caloric_measure(env, cyl, tuple(where[1]), where[0], walk)
    rep.constants["theta_measure"] = om.mass_of(np.broadcast_to(delta, om.weights.shape))
    rep.constants["measure_total"] = om.total()
    rep.verdicts["theta_positive"] = best > 0
    rep.verdicts["measure_is_probability"] = abs(om.total() - 1.0) <= 1e-12
    return rep


# -- oscillation decay ---------------------------------------------------------------


def decay(env: Environment, r: float = 4.0, geo: Geometry | None = None, *, lateral_time_step: int | None = None,
          n_random: int = N_RANDOM, seed: int = 0) -> EstimateReport:
    """rho = max over the family of sup_{Q_r} u / sup_{Q_2r} u for u caloric in
    Q_3r(Y) vanishing on Delta_2r(Y)."""
    geo = geo or Geometry.make(env)
    s, a = 0, -math.ceil(9 * r * r)
    H = s - a
    walk = KilledWalk(env, geo.domain(3 * r, "Q_3r"))
    zero = _vanishing(geo, walk, H, a, 2 * r, 4 * r * r, s)
    step = lateral_time_step or max(1, int(r) // 2)
    fam = build_family(walk, H, zero, lateral_times=range(step, H, step), n_random=n_random, seed=seed)
    q1 = geo.q_mask(walk.box, r) & walk.mask
    q2 = geo.q_mask(walk.box, 2 * r) & walk.mask
    t1, t2 = set(_times(s, a, -r * r, 0)), set(_times(s, a, -4 * r * r, 0))
    M1, M2 = np.zeros(fam.size), np.zeros(fam.size)

    def visit(k, u):
        if k == 0:
            return
        if k in t1:
            np.maximum(M1, u[:, q1].max(axis=1), out=M1)
        if k in t2:
            np.maximum(M2, u[:, q2].max(axis=1), out=M2)

    evolve_caloric(walk, fam, H, visit)
    rep = _report("boundary_decay", geo, r, height=H, family_size=fam.size, seed=seed)
    ok = M2 > 0
    rep.skip("vanishes_on_Q_2r", int((~ok).sum()))
    ratio = np.where(ok, M1 / np.where(ok, M2, 1.0), -np.inf)
    i = int(np.argmax(ratio))
    rep.constants["rho"] = float(ratio[i])
    rep.witness = dict(fam.labels[i])
    rep.verdicts["rho_below_one"] = bool(ratio[i] < 1.0)
    return rep


# -- Carleson ------------------------------------------------------------------------


def carleson(env: Environment, r: float = 4.0, geo: Geometry | None = None, *, lateral_time_step: int | None = None,
             n_random: int = N_RANDOM, seed: int = 0) -> EstimateReport:
    """max over Q_r(Y) of u / u(Ybar_r) for u caloric in Q cut to B_3r(y) x
    {s - 9r^2..s + 9r^2} and vanishing on the nearby boundary."""
    geo = geo or Geometry.make(env)
    s = 0
    a, b = -math.ceil(9 * r * r), math.ceil(9 * r * r)
    H = b - a
    walk = KilledWalk(env, geo.domain(3 * r, "carleson"))
    zero = _vanishing(geo, walk, H, a, 2 * r, 4 * r * r, s)
    step = lateral_time_step or max(1, int(r) // 2)
    fam = build_family(walk, H, zero, lateral_times=range(step, H, step), n_random=n_random, seed=seed)
    yr = shifted_point(env, geo.y0, geo.R0, geo.y, r, Domain(walk.box, walk.mask))
    kbar = s + 2 * sq(r) - a
    q = geo.q_mask(walk.box, r) & walk.mask
    qt = set(_times(s, a, -r * r, 0))
    sup = np.zeros(fam.size)
    top = np.zeros(fam.size)
    yi = walk.box.index(yr)

    def visit(k, u):
        if k in qt:
            np.maximum(sup, u[:, q].max(axis=1), out=sup)
        if k == kbar:
            top[:] = u[(slice(None),) + yi]

    evolve_caloric(walk, fam, H, visit)
    rep = _report("boundary_carleson", geo, r, height=H, y_r=list(yr), family_size=fam.size + 1, seed=seed)
    ok = top > 0
    both = ~ok & (sup <= 0)
    rep.skip("vanishes_at_reference_and_on_Q_r", int(both.sum()))
    ratio = np.where(ok, sup / np.where(ok, top, 1.0), np.where(both, -np.inf, np.inf))
    i = int(np.argmax(ratio))
    C = max(1.0, float(ratio[i]))
    rep.constants["C"] = C
    rep.constants["constant_ratio"] = 1.0
    rep.witness = dict(fam.labels[i]) if ratio[i] >= 1.0 else {"kind": "constant"}
    rep.verdicts["finite"] = bool(np.isfinite(C))
    return rep


# -- exit split ----------------------------------------------------------------------


def exit_split(env: Environment, r: float = 4.0, geo: Geometry | None = None, K_range=range(2, 9)) -> EstimateReport:
    """Smallest K with P[exit through S_{Kr,r}] >= P[exit through Lambda_{Kr,r}]
    at every X in Q_r(Y), for D = Omega_{Kr,r} x {s - (Kr)^2..s}."""
    geo = geo or Geometry.make(env)
    s = 0
    rep = _report("boundary_exit_split", geo, r, K_range=list(K_range))
    found = None
    for K in K_range:
        R = K * r
        a = -math.ceil(R * R)
        H = s - a
        pad = env.gamma.reach_int
        box = Ball(geo.y, R).box.grow(pad + math.ceil(r) + 1)
        om = geo.omega.mask(box)
        dist = distance_to_set(box, geo.d_omega(box)) if geo.d_omega(box).any() else np.full(box.shape, np.inf)
        thin = om & (dist < r) & Ball(geo.y, R).mask(box)
        dom = Domain.from_mask(box, thin, pad, label=f"D_K{K}")
        sl = dom.box.intersect(box)
        dist_d = np.full(dom.box.shape, np.inf)
        dist_d[sl.slices_in(dom.box)] = dist[sl.slices_in(box)]
        om_d = geo.omega.mask(dom.box)
        walk = KilledWalk(env, dom)
        closure = walk.mask | walk.boundary
        pmask = np.zeros((H + 1,) + dom.box.shape, dtype=bool)
        pmask[0] = closure
        pmask[1:H] = walk.boundary
        lam = pmask & (om_d & (dist_d > 0) & (dist_d < r))
        S = pmask & (om_d & (dist_d >= r))
        cyl = Cylinder(dom, a, s)
        pS = solve_caloric(env, cyl, S.astype(float))
        pL = solve_caloric(env, cyl, lam.astype(float))
        q = geo.q_mask(dom.box, r) & walk.mask
        worst = np.inf
        for k in _times(s, a, -r * r, 0):
            if k == 0:
                continue
            worst = min(worst, float((pS[k][q] - pL[k][q]).min()))
        holds = worst >= 0
        rep.rows.append({"K": K, "min_margin": worst, "holds": bool(holds),
                         "P_S_min": float(np.nanmin(np.where(q, pS[1:], np.nan))),
                         "P_Lambda_max": float(np.nanmax(np.where(q, pL[1:], np.nan)))})
        if holds:
            found = K
            break
    rep.constants["K"] = found if found is not None else "none"
    rep.verdicts["K_found"] = found is not None
    return rep


# -- comparability -------------------------------------------------------------------


def comparability(env: Environment, r: float = 8.0, y0=None, *, n_random: int = N_RANDOM, seed: int = 0) -> EstimateReport:
    """max of u(x0, [r]^2) v(x, t) / (v(x0, 4[r]^2) u(x, t)) over x0 in B_{r/2},
    (x, t) in B_r x {r^2..3r^2}, for caloric u, v in B_r x N vanishing on the
    lateral boundary.

    The maximum over pairs factorises into max_u u(x0,[r]^2)/u(x,t) times
    max_v v(x,t)/v(x0,4[r]^2), evaluated per (x0, x, t).
    """
    y0 = tuple(int(v) for v in (y0 if y0 is not None else (0,) * env.dimension))
    walk = KilledWalk(env, Domain.from_ball(Ball(y0, r), env.gamma.reach_int))
    k1, k4 = sq(r), 4 * sq(r)
    t_lo, t_hi = math.ceil(r * r), math.floor(3 * r * r)
    H = max(k4, t_hi)
    zero = np.zeros((H + 1,) + walk.box.shape, dtype=bool)
    zero[:] = walk.boundary
    fam = build_family(walk, H, zero, lateral_free=False, n_random=n_random, seed=seed)
    x0m = Ball(y0, r / 2).mask(walk.box)
    inside = walk.mask
    at1 = at4 = None
    slab = {}

    def visit(k, u):
        nonlocal at1, at4
        if k == k1:
            at1 = u[:, x0m]
        if k == k4:
            at4 = u[:, x0m]
        if t_lo <= k <= t_hi:
            slab[k] = u[:, inside]

    evolve_caloric(walk, fam, H, visit)
    U = np.stack([slab[k] for k in sorted(slab)], axis=1)  # (F, T, X)
    rep = EstimateReport("boundary_comparability", env.fingerprint(),
                         grid={"r": float(r), "y0": list(y0), "t_range": [t_lo, t_hi], "family_size": fam.size + 1})
    rep.grid["regime"] = "below_threshold" if r < r_min(env) else "asymptotic"
    if np.any(U <= 0) or np.any(at4 <= 0):
        bad = (U <= 0).any(axis=(1, 2)) | (at4 <= 0).any(axis=1)
        rep.skip("vanishes_inside", int(bad.sum()))
        keep = ~bad
        U, at1, at4 = U[keep], at1[keep], at4[keep]
    best, arg = 1.0, None
    for j in range(at1.shape[1]):
        left = (at1[:, j][:, None, None] / U).max(axis=0)  # over u
        right = (U / at4[:, j][:, None, None]).max(axis=0)  # over v
        prod = left * right
        i = np.unravel_index(int(np.argmax(prod)), prod.shape)
        if prod[i] > best:
            best, arg = float(prod[i]), (j, int(i[0]), int(i[1]))
    rep.constants["C"] = best
    rep.constants["constant_ratio"] = 1.0
    if arg:
        pts0 = np.argwhere(x0m) + walk.box.lo
        pts = np.argwhere(inside) + walk.box.lo
        rep.witness = {"x0": [int(v) for v in pts0[arg[0]]], "t": sorted(slab)[arg[1]], "x": [int(v) for v in pts[arg[2]]]}
    else:
        rep.witness = {"kind": "constant"}
    rep.verdicts["finite"] = bool(np.isfinite(best))
    return rep


# -- time shift ----------------------------------------------------------------------


def shift_monotone(env: Environment, r: float = 8.0, y0=None, c: float = 0.25) -> EstimateReport:
    """max of q_s(x, y) / q_{s + r^2}(x, y) over dist(x, dB_r) <= c r,
    y in B_{r/2}, 0 < s < 2r^2, with q the kernel killed outside B_r(y0)."""
    y0 = tuple(int(v) for v in (y0 if y0 is not None else (0,) * env.dimension))
    walk = KilledWalk(env, Domain.from_ball(Ball(y0, r), env.gamma.reach_int))
    shift = math.ceil(r * r) if float(r * r).is_integer() else None
    if shift is None:
        raise ValueError("r^2 must be an integer time shift")
    s_hi = math.ceil(2 * r * r) - 1
    poles = Ball(y0, r / 2).points()
    near = walk.mask & (distance_to_set(walk.box, walk.boundary) <= c * r)
    # columns u_s(x) = q_s(x, y): backward recursion from the indicator of y
    u = np.stack([walk.delta(p) for p in poles])
    hist = {}
    best, arg = 0.0, None
    rep = EstimateReport("boundary_shift_monotone", env.fingerprint(),
                         grid={"r": float(r), "y0": list(y0), "c": c, "poles": len(poles)})
    rep.grid["regime"] = "below_threshold" if r < r_min(env) else "asymptotic"
    zero_pairs = 0
    for t in range(1, s_hi + shift + 1):
        u = walk.backward(u)
        if 1 <= t <= s_hi:
            hist[t] = u[:, near]
        if t - shift in hist:
            num = hist.pop(t - shift)
            den = u[:, near]
            pos = num > 0
            if np.any(pos & (den <= 0)):
                best, arg = np.inf, (t - shift,)
                break
            zero_pairs += int((~pos).sum())
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(pos, num / np.where(den > 0, den, 1.0), 0.0)
            i = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
            if ratio[i] > best:
                best = float(ratio[i])
                xs = np.argwhere(near) + walk.box.lo
                arg = (t - shift, [int(v) for v in poles[i[0]]], [int(v) for v in xs[i[1]]])
    rep.skip("zero_numerator", zero_pairs)
    rep.constants["C"] = best
    rep.witness = {"s": arg[0], "y": arg[1], "x": arg[2]} if arg and len(arg) == 3 else {"s": arg[0] if arg else None}
    rep.verdicts["finite"] = bool(np.isfinite(best))
    return rep


# -- maximum principle --------------------------------------------------------------


def maximum_principle_check(env: Environment, n_problems: int = 100, seed: int = 0, radius: float = 5.0,
                            height: int = 30) -> EstimateReport:
    """Random boundary value problems on ball cylinders: the solution stays
    between the extremes of its data."""
    rng = np.random.default_rng(seed)
    d = env.dimension
    walk = KilledWalk(env, Domain.from_ball(Ball((0,) * d, radius), env.gamma.reach_int))
    cyl = Cylinder(walk.domain, 0, height)
    pm = cyl.parabolic_mask(env.increments)
    worst = 0.0
    failures = 0
    for i in range(n_problems):
        phi = np.where(pm, rng.normal(size=pm.shape), 0.0)
        u = solve_caloric(env, cyl, phi)
        lo, hi = phi[pm].min(), phi[pm].max()
        inner = u[1:][:, walk.mask]
        over = max(float(inner.max() - hi), float(lo - inner.min()), 0.0)
        worst = max(worst, over)
        failures += over > 1e-12
    rep = EstimateReport("maximum_principle", env.fingerprint(),
                         grid={"problems": n_problems, "seed": seed, "radius": radius, "height": height})
    rep.constants["max_violation"] = worst
    rep.constants["failures"] = failures
    rep.verdicts["maximum_principle"] = failures == 0
    return rep


def boundary_behavior(env: Environment, kind: str, M=None, **params) -> EstimateReport:
    """Dispatch one boundary check by name.  ``M`` is accepted for interface
    symmetry; none of these checks needs the adjoint weight."""
    fns = {"carleson": carleson, "caloric_lower": caloric_lower, "decay": decay, "exit_split": exit_split,
           "comparability": comparability, "shift_monotone": shift_monotone}
    if kind not in fns:
        raise ValueError(f"unknown boundary check {kind!r}; expected one of {KINDS}")
    if kind in ("carleson", "caloric_lower", "decay", "exit_split"):
        geo_keys = {k: params.pop(k) for k in ("R0", "y0", "y", "direction") if k in params}
        params["geo"] = Geometry.make(env, **geo_keys)
    return fns[kind](env, **params)
