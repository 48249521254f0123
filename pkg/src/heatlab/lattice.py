"""Lattice geometry: boxes, balls, finite domains and space-time cylinders.

Balls are open Euclidean balls ``B_r(x) = {y : |y - x| < r}``.  Boundaries
of finite sets are taken with respect to the increment set: the boundary of
``A`` is every lattice point outside ``A`` reachable from ``A`` in one step.
All enumerations are lexicographic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage


def floor_int(r: float) -> int:
    """Greatest integer <= r."""
    return math.floor(r)


def strict_range(lo: float, hi: float) -> range:
    """Integers k with lo < k < hi."""
    return range(math.floor(lo) + 1, math.ceil(hi))


@dataclass(frozen=True)
class Box:
    """Axis-aligned integer box with inclusive corners."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("box corners differ in dimension")

    @classmethod
    def around(cls, center, half_width) -> Box:
        c = np.asarray(center, dtype=int)
        w = np.broadcast_to(np.asarray(half_width, dtype=int), c.shape)
        return cls(tuple(c - w), tuple(c + w))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if not self.is_empty else 0

    @property
    def is_empty(self) -> bool:
        return any(h < l for l, h in zip(self.lo, self.hi))

    def contains(self, x) -> bool:
        return all(l <= int(v) <= h for v, l, h in zip(x, self.lo, self.hi))

    def contains_box(self, other: Box) -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(
            a >= b for a, b in zip(self.hi, other.hi)
        )

    def grow(self, k) -> Box:
        k = np.broadcast_to(np.asarray(k, dtype=int), (self.dim,))
        return Box(tuple(np.subtract(self.lo, k)), tuple(np.add(self.hi, k)))

    def shift(self, v) -> Box:
        return Box(tuple(np.add(self.lo, v)), tuple(np.add(self.hi, v)))

    def union(self, other: Box) -> Box:
        return Box(tuple(np.minimum(self.lo, other.lo)), tuple(np.maximum(self.hi, other.hi)))

    def intersect(self, other: Box) -> Box:
        return Box(tuple(np.maximum(self.lo, other.lo)), tuple(np.minimum(self.hi, other.hi)))

    def slices_in(self, outer: Box) -> tuple[slice, ...]:
        """Slices selecting this box inside an array laid out over ``outer``."""
        if not outer.contains_box(self):
            raise ValueError(f"{self} is not inside {outer}")
        return tuple(slice(l - ol, h - ol + 1) for l, h, ol in zip(self.lo, self.hi, outer.lo))

    def index(self, x) -> tuple[int, ...]:
        return tuple(int(v) - l for v, l in zip(x, self.lo))

    def axes(self) -> list[np.ndarray]:
        return [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]

    def coords(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """All points, lexicographic, shape (size, dim)."""
        return np.stack([c.ravel() for c in self.coords()], axis=1)


def sq_dist(box: Box, center) -> np.ndarray:
    """Squared Euclidean distance of every box point to ``center``."""
    out = np.zeros(box.shape)
    for axis, (ax, c) in enumerate(zip(box.axes(), center)):
        shape = [1] * box.dim
        shape[axis] = -1
        out = out + ((ax - c) ** 2).reshape(shape)
    return out


@dataclass(frozen=True)
class Ball:
    """Open Euclidean ball of lattice points."""

    center: tuple[int, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(int(v) for v in self.center))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def box(self) -> Box:
        """Bounding box of the lattice points of the ball."""
        k = max(math.ceil(self.radius) - 1, 0)
        return Box.around(self.center, k)

    def mask(self, box: Box) -> np.ndarray:
        return sq_dist(box, self.center) < self.radius**2

    def contains(self, x) -> bool:
        return sum((int(a) - b) ** 2 for a, b in zip(x, self.center)) < self.radius**2

    def points(self) -> np.ndarray:
        b = self.box
        return b.points()[self.mask(b).ravel()]

    def count(self) -> int:
        return int(self.mask(self.box).sum())


class Domain:
    """A finite set ``A`` of lattice points stored as a mask over a padded box.

    The box carries at least ``pad`` layers around ``A`` so that the boundary
    ``dA`` and one-step shifts stay inside the array.
    """

    def __init__(self, box: Box, mask: np.ndarray, label: str = ""):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != box.shape:
            raise ValueError("mask shape does not match box")
        self.box = box
        self.mask = mask
        self.label = label

    @classmethod
    def from_ball(cls, ball: Ball, pad: int) -> Domain:
        box = ball.box.grow(pad)
        return cls(box, ball.mask(box), label=f"ball{ball.center}r{ball.radius:g}")

    @classmethod
    def from_mask(cls, box: Box, mask: np.ndarray, pad: int, label: str = "") -> Domain:
        """Re-pad an arbitrary mask so that ``pad`` empty layers surround it."""
        idx = np.argwhere(mask)
        if len(idx) == 0:
            raise ValueError("empty domain")
        lo = np.add(box.lo, idx.min(axis=0))
        hi = np.add(box.lo, idx.max(axis=0))
        tight = Box(tuple(lo), tuple(hi))
        new = tight.grow(pad)
        m = np.zeros(new.shape, dtype=bool)
        m[tight.slices_in(new)] = mask[tight.slices_in(box)]
        return cls(new, m, label)

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def contains(self, x) -> bool:
        return self.box.contains(x) and bool(self.mask[self.box.index(x)])

    def points(self) -> np.ndarray:
        return np.argwhere(self.mask) + np.asarray(self.box.lo)

    def boundary(self, increments: np.ndarray) -> np.ndarray:
        """Mask of ``dA``: points outside ``A`` equal to ``z + e`` for some z in A."""
        reach = np.abs(increments).max(axis=0)
        inner = self.box.grow(-reach)
        if inner.is_empty or not _mask_inside(self.mask, self.box, inner):
            raise ValueError("domain padding is smaller than the increment reach")
        hit = np.zeros_like(self.mask)
        src = self.mask[inner.slices_in(self.box)]
        for e in increments:
            hit[inner.shift(e).slices_in(self.box)] |= src
        return hit & ~self.mask

    def closure(self, increments: np.ndarray) -> np.ndarray:
        return self.mask | self.boundary(increments)


def _mask_inside(mask: np.ndarray, box: Box, inner: Box) -> bool:
    total = mask.sum()
    return total == mask[inner.slices_in(box)].sum()


def nearest_lattice_point(target, admissible=None) -> tuple[int, ...]:
    """Lattice point within distance 1 of ``target`` closest to it.

    Ties are broken lexicographically; ``admissible`` optionally filters
    candidates (e.g. membership in a domain).
    """
    target = np.asarray(target, dtype=float)
    base = np.floor(target).astype(int)
    cands = Box(tuple(base - 1), tuple(base + 2)).points()
    dist = np.sqrt(((cands - target) ** 2).sum(axis=1))
    keep = dist <= 1.0 + 1e-12
    if admissible is not None:
        keep &= np.array([admissible(tuple(c)) for c in cands])
    if not keep.any():
        raise ValueError(f"no admissible lattice point within 1 of {target}")
    cands, dist = cands[keep], dist[keep]
    order = np.lexsort(tuple(cands[:, i] for i in reversed(range(cands.shape[1]))) + (np.round(dist, 12),))
    return tuple(int(v) for v in cands[order[0]])


def lexicographic_annulus_point(center, r_in: float, r_out: float) -> tuple[int, ...]:
    """Lexicographically smallest lattice point x with r_in <= |x - c| < r_out."""
    ball = Ball(center, r_out)
    pts = ball.points()
    d2 = ((pts - np.asarray(center)) ** 2).sum(axis=1)
    ok = pts[d2 >= r_in**2]
    if len(ok) == 0:
        raise ValueError("empty annulus")
    return tuple(int(v) for v in ok[0])


def distance_to_set(box: Box, target_mask: np.ndarray) -> np.ndarray:
    """Euclidean distance from every box point to the nearest point of a mask."""
    if not target_mask.any():
        raise ValueError("empty target set")
    return ndimage.distance_transform_edt(~target_mask)


@dataclass(frozen=True)
class Cylinder:
    """Space-time cylinder ``A x {a <= k <= b}`` over a finite domain."""

    domain: Domain
    a: int
    b: int

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError("cylinder needs a < b")

    @property
    def height(self) -> int:
        return self.b - self.a

    def times(self) -> range:
        return range(self.a, self.b + 1)

    def is_interior(self, x, k) -> bool:
        """True for (x, k) in A x {a < k <= b}, where exits can start."""
        return self.domain.contains(x) and self.a < k <= self.b

    def boundary_masks(self, increments: np.ndarray):
        """(lateral, bottom) masks: dA for a < k < b, and closure(A) at k = a."""
        return self.domain.boundary(increments), self.domain.closure(increments)

    def parabolic_mask(self, increments: np.ndarray) -> np.ndarray:
        """Boolean array over (time, *box) marking the parabolic boundary."""
        lateral, bottom = self.boundary_masks(increments)
        out = np.zeros((self.height + 1,) + self.domain.box.shape, dtype=bool)
        out[0] = bottom
        out[1:-1] = lateral
        return out
