"""Harnack-type ratios for caloric and normalized adjoint solutions.

Each check computes, for every member of a finite test family, the exact
supremum and infimum over the regions of the inequality and reports the
largest ratio.  The constant function is always a member; its ratio is 1 by
definition and is recorded without numerical evaluation.
"""
from __future__ import annotations

import math

import numpy as np

from ..adjoint import AdjointSolution
from ..environment import Environment
from ..kernel import KilledWalk, kernel_rows
from ..lattice import Ball, Box, Domain
from ..report import EstimateReport, stable
from .common import (
    N_RANDOM,
    ball_boundary_on,
    boundary_point,
    build_family,
    ceil_sq,
    evolve_adjoint,
    evolve_caloric,
    r_min,
    shifted_point,
    sq,
    times_strict,
)

KINDS = ("parabolic", "adjoint", "boundary", "backward")


def _origin(env, y):
    return tuple(int(v) for v in (y if y is not None else (0,) * env.dimension))


def _summarize(rep: EstimateReport, labels, num, den, what="ratio"):
    """Fill constants/witness/rows from per-function numerators and denominators."""
    num = np.asarray(num, float)
    den = np.asarray(den, float)
    ok = den > 0
    both = ~ok & (num <= 0)
    rep.skip("vanishes_on_both_regions", int(both.sum()))
    ratio = np.full(len(num), np.nan)
    ratio[ok] = num[ok] / den[ok]
    ratio[~ok & ~both] = np.inf
    ok = ~both
    for lab, v in zip(labels, ratio):
        rep.rows.append(dict(lab, **{what: v}))
    rep.rows.append({"kind": "constant", what: 1.0})
    vals = np.where(ok, ratio, -np.inf)
    best = int(np.argmax(vals)) if ok.any() else None
    C = max(1.0, float(vals[best])) if best is not None else 1.0
    rep.constants["C"] = C
    by_kind = {}
    for lab, v in zip(labels, ratio):
        if np.isfinite(v):
            by_kind[lab["kind"]] = max(by_kind.get(lab["kind"], 0.0), float(v))
    by_kind["constant"] = 1.0
    rep.constants["C_by_family"] = by_kind
    rep.constants["constant_ratio"] = 1.0
    rep.witness = dict(labels[best]) if best is not None and vals[best] >= 1.0 else {"kind": "constant"}
    rep.verdicts["finite"] = bool(np.isfinite(C))
    return C


def _regime(rep, env, r):
    below = r < r_min(env)
    rep.grid["regime"] = "below_threshold" if below else "asymptotic"
    return below


# -- parabolic Harnack ---------------------------------------------------------------


def parabolic_harnack(env: Environment, r: float, y=None, *, lateral_time_step: int | None = None,
                      lateral_stride: int = 1, n_random: int = N_RANDOM, seed: int = 0) -> EstimateReport:
    """sup over B_r(y) x (s-3r^2, s-2r^2) against inf over B_r(y) x (s-r^2, s).

    Cylinder B_2r(y) x {s - 4r^2 <= k <= s}, placed at a = 0.
    """
    y = _origin(env, y)
    H = ceil_sq(2 * r)
    s = H
    walk = KilledWalk(env, Domain.from_ball(Ball(y, 2 * r), env.gamma.reach_int))
    step = lateral_time_step or max(1, int(r) // 2)
    fam = build_family(walk, H, lateral_times=range(step, H, step), lateral_stride=lateral_stride,
                       n_random=n_random, seed=seed)
    inner = Ball(y, r).mask(walk.box)
    sup_t = set(times_strict(s - 3 * r * r, s - 2 * r * r))
    inf_t = set(times_strict(s - r * r, s))
    sup = np.zeros(fam.size)
    inf = np.full(fam.size, np.inf)

    def visit(k, u):
        if k in sup_t:
            np.maximum(sup, u[:, inner].max(axis=1), out=sup)
        if k in inf_t:
            np.minimum(inf, u[:, inner].min(axis=1), out=inf)

    evolve_caloric(walk, fam, H, visit)
    rep = EstimateReport("harnack_parabolic", env.fingerprint(),
                         grid={"r": float(r), "y": list(y), "height": H, "family_size": fam.size + 1,
                               "lateral_time_step": step, "lateral_stride": lateral_stride, "seed": seed})
    _regime(rep, env, r)
    if not sup_t or not inf_t:
        rep.skip("empty_time_range")
    _summarize(rep, fam.labels, sup, inf)
    return rep


# -- adjoint Harnack -----------------------------------------------------------------


def adjoint_harnack(env: Environment, r: float, M: AdjointSolution, y0=None, *, lateral_time_step: int | None = None,
                    lateral_stride: int = 1, n_random: int = N_RANDOM, seed: int = 0,
                    free_poles=None, wide_pole_stride: int = 1) -> EstimateReport:
    """sup over B_{r/2}(y0) x (r^2, 2r^2) against inf over B_{r/2}(y0) x (3r^2, 4r^2)
    for normalized adjoint solutions v / M in B_r(y0).

    Family: killed kernels of B_r from every interior point, lateral
    injections, random initial and lateral data, killed kernels of B_2r from
    points of B_r, and free kernels from ``free_poles``.
    """
    y0 = _origin(env, y0)
    T = math.ceil(4 * r * r) - 1
    half = Ball(y0, r / 2)
    region = half.box
    m = M.on(region)
    hmask = half.mask(region)
    sup_t = set(times_strict(r * r, 2 * r * r))
    inf_t = set(times_strict(3 * r * r, 4 * r * r))
    labels, sups, infs = [], [], []

    def collect(walk, vals_fn, nlab):
        sup = np.zeros(nlab)
        inf = np.full(nlab, np.inf)
        sl = region.slices_in(walk.box)

        def visit(t, v):
            if t in sup_t or t in inf_t:
                w = v[(Ellipsis,) + sl][:, hmask] / m[hmask]
                if t in sup_t:
                    np.maximum(sup, w.max(axis=1), out=sup)
                if t in inf_t:
                    np.minimum(inf, w.min(axis=1), out=inf)

        vals_fn(visit)
        sups.append(sup)
        infs.append(inf)

    # killed in B_r: initial atoms, lateral atoms, random data
    walk = KilledWalk(env, Domain.from_ball(Ball(y0, r), env.gamma.reach_int))
    inside = np.flatnonzero(walk.mask.ravel())
    bidx = np.flatnonzero(walk.boundary.ravel())[::max(1, lateral_stride)]
    step = lateral_time_step or max(1, int(r) // 2)
    lat_times = list(range(0, T, step))
    nin, nlat = len(inside), len(bidx) * len(lat_times)
    F = nin + nlat + n_random
    init = np.zeros((F, walk.box.size))
    init[np.arange(nin), inside] = 1.0
    rng = np.random.default_rng(seed)
    init[nin + nlat:] = np.where(walk.mask.ravel(), rng.random((n_random, walk.box.size)), 0.0)
    init = init.reshape((F,) + walk.box.shape)
    for x in inside:
        labels.append({"kind": "killed_kernel", "pole": _pt(walk.box, x)})
    atom_at = {}
    for ti, t in enumerate(lat_times):
        for bi, b in enumerate(bidx):
            f = nin + ti * len(bidx) + bi
            atom_at.setdefault(t, []).append((f, b))
            labels.append({"kind": "lateral_injection", "point": _pt(walk.box, b), "time": int(t)})
    labels.extend({"kind": "random", "index": i} for i in range(n_random))

    def boundary(t):
        out = np.zeros((F, walk.box.size))
        for f, b in atom_at.get(t, ()):
            out[f, b] = 1.0
        out[nin + nlat:] = np.where(walk.boundary.ravel(), np.random.default_rng([seed, t]).random((n_random, walk.box.size)), 0.0)
        return out.reshape((F,) + walk.box.shape)

    collect(walk, lambda visit: evolve_adjoint(walk, init, boundary, T, visit), F)

    # killed in B_2r from points of B_r
    wide = KilledWalk(env, Domain.from_ball(Ball(y0, 2 * r), env.gamma.reach_int))
    poles = Ball(y0, r).points()[::max(1, wide_pole_stride)]
    init2 = np.stack([wide.delta(p) for p in poles])
    labels.extend({"kind": "killed_kernel_wide", "pole": [int(v) for v in p]} for p in poles)
    collect(wide, lambda visit: evolve_adjoint(wide, init2, lambda t: None, T, visit), len(poles))

    # free kernels
    if free_poles is None:
        free_poles = [y0] + [tuple(np.add(y0, np.eye(env.dimension, dtype=int)[0] * k)) for k in (int(r // 2), int(r))]
    for p in free_poles:
        sup = np.zeros(1)
        inf = np.full(1, np.inf)
        wanted = sorted(sup_t | inf_t)
        for t, field in kernel_rows(env, p, wanted, trim_tol=0.0):
            w = field.on(region)[hmask] / m[hmask]
            if t in sup_t:
                sup[0] = max(sup[0], w.max())
            if t in inf_t:
                inf[0] = min(inf[0], w.min())
        sups.append(sup)
        infs.append(inf)
        labels.append({"kind": "free_kernel", "pole": [int(v) for v in p]})

    rep = EstimateReport("harnack_adjoint", env.fingerprint(),
                         grid={"r": float(r), "y0": list(y0), "T": T, "family_size": len(labels) + 1,
                               "lateral_time_step": step, "lateral_stride": lateral_stride, "seed": seed,
                               "normalization": "global"})
    _regime(rep, env, r)
    _summarize(rep, labels, np.concatenate(sups), np.concatenate(infs))
    return rep


def _pt(box: Box, idx) -> list:
    return [int(v) for v in np.add(np.unravel_index(int(idx), box.shape), box.lo)]


# -- boundary Harnack ----------------------------------------------------------------


def boundary_harnack(env: Environment, R0: float, r: float, K: float, y0=None, *, lateral_time_step: int | None = None,
                     n_random: int = N_RANDOM, seed: int = 0) -> EstimateReport:
    """sup over Q_r(Y) of u/v against u(Ybar_{Kr}) / v(Yunder_{Kr}) for caloric
    u, v in Omega = B_R0(y0) vanishing on the boundary near Y."""
    y0 = _origin(env, y0)
    Omega = Ball(y0, R0)
    y = boundary_point(env, y0, R0)
    s_rad2 = (K * r) ** 2
    a = -math.ceil(9 * s_rad2)
    b = math.ceil(9 * s_rad2)
    H = b - a
    s = 0
    box = Omega.box.grow(env.gamma.reach_int + 1)
    om_mask = Omega.mask(box)
    A = om_mask & Ball(y, 3 * K * r).mask(box)
    dom = Domain.from_mask(box, A, env.gamma.reach_int, label="boundary-harnack")
    walk = KilledWalk(env, dom)
    dOmega = ball_boundary_on(env, Omega, dom.box)
    near = Ball(y, 2 * K * r).mask(dom.box) & dOmega
    zero = np.zeros((H + 1,) + dom.box.shape, dtype=bool)
    for k in range(H + 1):
        if abs(a + k - s) <= 4 * s_rad2:
            zero[k] = near
    step = lateral_time_step or max(1, int(r))
    fam = build_family(walk, H, zero, lateral_times=range(step, H, step), n_random=n_random, seed=seed)

    ykr = shifted_point(env, y0, R0, y, K * r, Domain(dom.box, Omega.mask(dom.box)))
    kbar = s + 2 * sq(K * r) - a
    kund = s - 2 * sq(K * r) - a
    q_mask = Omega.mask(dom.box) & Ball(y, r).mask(dom.box)
    q_times = {k - a for k in range(math.ceil(s - r * r), s + 1)}
    qvals = []
    at_bar = np.zeros(fam.size)
    at_und = np.zeros(fam.size)
    yi = dom.box.index(ykr)

    def visit(k, u):
        if k in q_times:
            qvals.append(u[:, q_mask])
        if k == kbar:
            at_bar[:] = u[(slice(None),) + yi]
        if k == kund:
            at_und[:] = u[(slice(None),) + yi]

    evolve_caloric(walk, fam, H, visit)
    Q = np.concatenate(qvals, axis=1)  # (F, points)
    rep = EstimateReport("harnack_boundary", env.fingerprint(),
                         grid={"R0": float(R0), "r": float(r), "K": float(K), "y0": list(y0), "y": list(y),
                               "y_Kr": list(ykr), "height": H, "family_size": fam.size + 1, "seed": seed})
    _regime(rep, env, r)
    usable_v = (Q > 0).all(axis=1) & (at_und > 0)
    usable_u = at_bar > 0
    rep.skip("v_vanishes_on_Q_or_at_lower_point", int((~usable_v).sum()))
    rep.skip("u_vanishes_at_upper_point", int((~usable_u).sum()))
    Qu = Q[usable_u]
    Qv = Q[usable_v]
    best, arg = 1.0, None
    for j, vj in enumerate(Qv):
        ratios = (Qu / vj).max(axis=1) * (at_und[usable_v][j] / at_bar[usable_u])
        i = int(np.argmax(ratios))
        if ratios[i] > best:
            best, arg = float(ratios[i]), (i, j)
    lu = [lab for lab, ok in zip(fam.labels, usable_u) if ok]
    lv = [lab for lab, ok in zip(fam.labels, usable_v) if ok]
    rep.constants["C"] = best
    rep.constants["constant_ratio"] = 1.0
    rep.witness = {"u": lu[arg[0]], "v": lv[arg[1]]} if arg else {"u": {"kind": "constant"}, "v": {"kind": "constant"}}
    rep.verdicts["finite"] = bool(np.isfinite(best))
    rep.rows = [{"pairs": int(len(lu) * len(lv))}]
    return rep


# -- backward Harnack ----------------------------------------------------------------


def backward_harnack(env: Environment, r: float, y0=None, *, n_random: int = N_RANDOM, seed: int = 0) -> EstimateReport:
    """max over B_r x {r^2 <= k <= 3r^2} of u(x, k + 2[r]^2) / u(x, k) for
    caloric u in B_r(y0) x N vanishing on the lateral boundary."""
    y0 = _origin(env, y0)
    walk = KilledWalk(env, Domain.from_ball(Ball(y0, r), env.gamma.reach_int))
    shift = sq(r)
    shift2 = 2 * shift
    k_lo, k_hi = math.ceil(r * r), math.floor(3 * r * r)
    H = k_hi + shift2
    zero = np.zeros((H + 1,) + walk.box.shape, dtype=bool)
    zero[:] = walk.boundary
    fam = build_family(walk, H, zero, lateral_free=False, n_random=n_random, seed=seed)
    mask = walk.mask
    hist = {}
    worst = np.zeros(fam.size)
    where = [None] * fam.size

    def visit(k, u):
        if k_lo <= k <= k_hi:
            hist[k] = u[:, mask]
        kk = k - shift2
        if kk in hist:
            base = hist.pop(kk)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(base > 0, u[:, mask] / base, np.where(u[:, mask] > 0, np.inf, 0.0))
            i = ratio.argmax(axis=1)
            val = ratio[np.arange(len(i)), i]
            better = val > worst
            worst[better] = val[better]
            for f in np.flatnonzero(better):
                where[f] = (int(i[f]), int(kk))

    evolve_caloric(walk, fam, H, visit)
    pts = walk.domain.points()
    rep = EstimateReport("harnack_backward", env.fingerprint(),
                         grid={"r": float(r), "y0": list(y0), "shift": shift2, "k_range": [k_lo, k_hi],
                               "family_size": fam.size + 1, "seed": seed})
    _regime(rep, env, r)
    C = _summarize(rep, fam.labels, worst, np.ones(fam.size))
    f = int(np.argmax(worst))
    if where[f] is not None and worst[f] >= 1.0:
        rep.witness["x"] = [int(v) for v in pts[where[f][0]]]
        rep.witness["k"] = where[f][1]
    rep.verdicts["bounded_on_family"] = bool(np.all(worst <= C))
    return rep


def harnack_ratio(env: Environment, kind: str, **params) -> EstimateReport:
    if kind == "parabolic":
        return parabolic_harnack(env, **params)
    if kind == "adjoint":
        return adjoint_harnack(env, **params)
    if kind == "boundary":
        return boundary_harnack(env, **params)
    if kind == "backward":
        return backward_harnack(env, **params)
    raise ValueError(f"unknown Harnack kind {kind!r}; expected one of {KINDS}")


def scale_report(env: Environment, kind: str, radii, factor: float = 2.0, **params) -> EstimateReport:
    """Run one kind over doubling radii and check the constant stays within ``factor``."""
    reps = [harnack_ratio(env, kind, r=r, **params) for r in radii]
    rep = EstimateReport(f"harnack_{kind}_scales", env.fingerprint(), grid={"radii": [float(r) for r in radii]})
    Cs = [x.constants["C"] for x in reps]
    rep.constants["C_by_radius"] = Cs
    rep.constants["C"] = max(Cs)
    rep.rows = [x.to_dict() for x in reps]
    asym = [c for c, x in zip(Cs, reps) if x.grid.get("regime") != "below_threshold"]
    rep.verdicts["finite"] = all(np.isfinite(Cs))
    rep.verdicts["scale_stable"] = stable(asym, factor) if asym else True
    rep.grid["below_threshold"] = [float(x.grid["r"]) for x in reps if x.grid.get("regime") == "below_threshold"]
    return rep
