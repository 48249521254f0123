"""Batched evolution of families of caloric and adjoint solutions.

Every nonnegative caloric function on a cylinder is a nonnegative
combination of its exit-law atoms, so ratios of linear functionals are
extremal on atoms.  Families are therefore built from atoms (complete on
the bottom slice, subsampled on the lateral boundary), seeded random
boundary data and the constant function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..environment import Environment
from ..kernel import KilledWalk
from ..lattice import Ball, Box, Domain, nearest_lattice_point, strict_range

N_RANDOM = 50


def r_min(env: Environment) -> float:
    return 4.0 * env.gamma.diam


def sq(r: float) -> int:
    """[r]^2 with [r] the integer part."""
    return math.floor(r) ** 2


def ceil_sq(r: float) -> int:
    return math.ceil(r * r)


@dataclass
class Family:
    """Boundary data for F caloric functions on a cylinder of height H.

    ``bottom`` is (F, *box); lateral data at time index k is produced by
    :meth:`lateral` as (F, *box) and read only on the lateral boundary.
    """

    labels: list
    bottom: np.ndarray
    atoms: list = field(default_factory=list)  # (function index, time index, flat box index)
    random: list = field(default_factory=list)  # function indices with random lateral data
    seed: int = 0
    zero: np.ndarray | None = None  # (H+1, *box) mask where data is forced to vanish
    lateral_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.labels)

    def lateral(self, k: int) -> np.ndarray:
        out = np.zeros(self.bottom.shape)
        flat = out.reshape(len(out), -1)
        for f, t, idx in self.atoms_at.get(k, ()):
            flat[f, idx] = 1.0
        if self.random:
            m = self.lateral_mask
            rng = np.random.default_rng([self.seed, k])
            idx = np.asarray(self.random)
            sub = out[idx]
            sub[:, m] = rng.random((len(idx), int(m.sum())))
            out[idx] = sub
        if self.zero is not None:
            out[:, self.zero[k]] = 0.0
        return out

    def finalize(self):
        self.atoms_at = {}
        for f, t, idx in self.atoms:
            self.atoms_at.setdefault(t, []).append((f, t, idx))
        if self.zero is not None:
            self.bottom[:, self.zero[0]] = 0.0
        return self


def build_family(walk: KilledWalk, height: int, zero: np.ndarray | None = None, *, bottom_atoms=True,
                 lateral_times=(), lateral_stride: int = 1, n_random: int = N_RANDOM, seed: int = 0,
                 lateral_free: bool = True) -> Family:
    """Atoms of the parabolic boundary plus random data.

    ``zero`` (H+1, *box) marks boundary points where data must vanish; atoms
    there are left out.  With ``lateral_free`` false no lateral data is used.
    """
    box = walk.box
    closure = walk.mask | walk.boundary
    lateral = walk.boundary
    labels, bottoms, atoms, random = [], [], [], []
    flat_shape = box.size
    if bottom_atoms:
        for idx in np.flatnonzero(closure.ravel()):
            if zero is not None and zero[0].ravel()[idx]:
                continue
            b = np.zeros(flat_shape)
            b[idx] = 1.0
            bottoms.append(b.reshape(box.shape))
            labels.append({"kind": "bottom_atom", "point": _point(box, idx)})
    if lateral_free:
        lat_idx = np.flatnonzero(lateral.ravel())[::max(1, lateral_stride)]
        for k in lateral_times:
            if not 0 < k < height:
                continue
            for idx in lat_idx:
                if zero is not None and zero[k].ravel()[idx]:
                    continue
                atoms.append((len(labels), k, idx))
                bottoms.append(np.zeros(box.shape))
                labels.append({"kind": "lateral_atom", "point": _point(box, idx), "time_index": int(k)})
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        b = np.where(closure, rng.random(box.shape), 0.0)
        if lateral_free:
            random.append(len(labels))
        bottoms.append(b)
        labels.append({"kind": "random", "index": i})
    fam = Family(labels, np.stack(bottoms) if bottoms else np.zeros((0,) + box.shape), atoms, random, int(seed),
                 zero, lateral if lateral_free else np.zeros_like(lateral))
    return fam.finalize()


def _point(box: Box, idx: int) -> list:
    return [int(v) for v in np.add(np.unravel_index(idx, box.shape), box.lo)]


def evolve_caloric(walk: KilledWalk, fam: Family, height: int, visit):
    """Run the batch upward in time; ``visit(k, u)`` sees the slice at time index k.

    ``u`` has shape (F, *box) and holds values on the closure of the domain
    (interior from the recursion, lateral boundary from the data).
    """
    closure = walk.mask | walk.boundary
    u = np.where(closure, fam.bottom, 0.0)
    visit(0, u)
    lat = walk.boundary
    for k in range(1, height + 1):
        nxt = walk.backward(u)
        if k < height:
            nxt = np.where(lat, fam.lateral(k), nxt)
        u = nxt
        visit(k, u)


def evolve_adjoint(walk: KilledWalk, init: np.ndarray, boundary, T: int, visit):
    """Parabolic adjoint solutions v inside the domain from initial values and
    boundary values ``boundary(t)`` (F, *box) on the domain boundary.

    ``visit(t, v)`` sees v(., t) inside the domain for t = 0..T.
    """
    inside = walk.mask
    v = np.where(inside, init, 0.0)
    visit(0, v)
    for t in range(1, T + 1):
        nxt, _ = walk.forward(v)
        b = boundary(t - 1)
        if b is not None:
            nxt = nxt + walk.inject(b)
        v = nxt
        visit(t, v)


def boundary_point(env: Environment, center, radius: float, direction=None) -> tuple[int, ...]:
    """A point of the Gamma-boundary of B_radius(center) closest to center + radius * direction."""
    c = np.asarray(center, dtype=float)
    d = len(c)
    u = np.zeros(d)
    u[0] = 1.0
    if direction is not None:
        u = np.asarray(direction, float) / np.linalg.norm(direction)
    target = c + radius * u
    base = np.round(target).astype(int)
    best = None
    for off in Box.around(tuple(base), 2).points():
        p = tuple(int(v) for v in off)
        if Ball(center, radius).contains(p):
            continue
        if not any(Ball(center, radius).contains(np.subtract(p, e)) for e in env.increments):
            continue
        dist = float(np.linalg.norm(np.asarray(p) - target))
        key = (round(dist, 12), p)
        if best is None or key < best:
            best = key
    return best[1]


def shifted_point(env: Environment, y0, R0: float, y, r: float, omega: Domain) -> tuple[int, ...]:
    """y_r: lattice point of the domain within 1 of y0 + (R0 - r/2)(y - y0)/|y - y0|."""
    y0a, ya = np.asarray(y0, float), np.asarray(y, float)
    u = (ya - y0a) / np.linalg.norm(ya - y0a)
    return nearest_lattice_point(y0a + (R0 - r / 2) * u, admissible=omega.contains)


def ball_boundary_on(env: Environment, ball: Ball, box: Box) -> np.ndarray:
    """Gamma-boundary of a ball, restricted to ``box``."""
    full = Domain.from_ball(ball, env.gamma.reach_int)
    bd = full.boundary(env.increments)
    out = np.zeros(box.shape, dtype=bool)
    common = box.intersect(full.box)
    if not common.is_empty:
        out[common.slices_in(box)] = bd[common.slices_in(full.box)]
    return out


def times_strict(lo: float, hi: float) -> range:
    return strict_range(lo, hi)


def region_mask(box: Box, ball: Ball) -> np.ndarray:
    return ball.mask(box)
