"""Green functions on finite domains, caloric boundary-value problems and
caloric measure.

Caloric functions satisfy ``u(x, k + 1) = sum_e pi(x, e) u(x + e, k)``;
they are computed upward in time from the bottom slice.  The caloric
measure of a cylinder is the exit law of the space-time walk
``(S_j, t0 - j)``, obtained by killed forward evolution of a point mass.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .environment import Environment
from .kernel import DomainError, KilledWalk, MassField, ResourceLimitError, check_budget
from .lattice import Ball, Box, Cylinder, Domain

DIRECT_LIMIT = 2_000_000
SERIES_TOL = 1e-14
SERIES_CAP = 10_000_000


class ConvergenceError(RuntimeError):
    pass


class _LRU:
    """Thread-safe LRU map."""

    def __init__(self, maxsize: int):
        self.maxsize = maxsize
        self.data: OrderedDict = OrderedDict()
        self.lock = threading.Lock()

    def get(self, key):
        with self.lock:
            if key in self.data:
                self.data.move_to_end(key)
                return self.data[key]
        return None

    def put(self, key, value):
        with self.lock:
            self.data[key] = value
            self.data.move_to_end(key)
            while len(self.data) > self.maxsize:
                self.data.popitem(last=False)
        return value

    def clear(self):
        with self.lock:
            self.data.clear()


_solvers = _LRU(4)
_rows = _LRU(256)


def clear_caches():
    _solvers.clear()
    _rows.clear()


def transition_matrix(env: Environment, domain: Domain) -> sp.csr_matrix:
    """Substochastic matrix of the walk killed outside ``domain``.

    States are the points of the domain in lexicographic order.
    """
    pts = domain.points()
    n = len(pts)
    lookup = -np.ones(domain.box.shape, dtype=np.int64)
    lookup[domain.mask] = np.arange(n)
    pi = env.pi_points(pts)
    rows, cols, vals = [], [], []
    for j, e in enumerate(env.increments):
        tgt = pts + e
        idx = (tgt - np.asarray(domain.box.lo)).T
        ok = np.all((idx >= 0) & (idx < np.array(domain.box.shape)[:, None]), axis=0)
        col = np.full(n, -1)
        col[ok] = lookup[tuple(idx[:, ok])]
        keep = col >= 0
        rows.append(np.nonzero(keep)[0])
        cols.append(col[keep])
        vals.append(pi[keep, j])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


class GreenSolver:
    """Green function ``G(x, y) = sum_t h_t(x, y)`` of the walk killed outside a domain.

    ``method`` is ``"lu"`` (sparse factorization of ``I - P``), ``"series"``
    (summing killed steps until the alive mass is below ``tol``) or
    ``"auto"`` (factorization up to ``direct_limit`` states).
    """

    def __init__(self, env: Environment, domain: Domain, method: str = "auto",
                 direct_limit: int = DIRECT_LIMIT, tol: float = SERIES_TOL, cap: int = SERIES_CAP):
        if method not in ("auto", "lu", "series"):
            raise ValueError(f"unknown method {method!r}")
        self.env, self.domain = env, domain
        self.n = domain.size
        if method == "auto":
            method = "lu" if self.n <= direct_limit else "series"
        self.method = method
        self.tol, self.cap = tol, cap
        self._lu = None
        self._walk = None

    @property
    def lu(self):
        if self._lu is None:
            check_budget(self.n, 60, "sparse factorization")
            A = (sp.identity(self.n, format="csr") - transition_matrix(self.env, self.domain)).tocsc()
            self._lu = spla.splu(A)
        return self._lu

    @property
    def walk(self) -> KilledWalk:
        if self._walk is None:
            self._walk = KilledWalk(self.env, self.domain)
        return self._walk

    def _state(self, x) -> int:
        if not self.domain.contains(x):
            raise DomainError(f"{tuple(x)} is not inside the domain")
        if not hasattr(self, "_lookup"):
            self._lookup = np.cumsum(self.domain.mask).reshape(self.domain.mask.shape) - 1
        return int(self._lookup[self.domain.box.index(x)])

    def _to_box(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros(self.domain.box.shape)
        out[self.domain.mask] = vec
        return out

    def row(self, x) -> np.ndarray:
        """y -> G(x, y) over the domain box."""
        if self.method == "lu":
            b = np.zeros(self.n)
            b[self._state(x)] = 1.0
            return self._to_box(self.lu.solve(b, trans="T"))
        walk = self.walk
        mu = walk.delta(x)
        acc = mu.copy()
        for t in range(self.cap):
            mu, _ = walk.forward(mu)
            acc += mu
            if mu.sum() <= self.tol:
                return acc
        raise ConvergenceError(f"alive mass still {mu.sum():.3g} after {self.cap} steps")

    def column(self, y) -> np.ndarray:
        """x -> G(x, y) over the domain box."""
        if self.method == "lu":
            b = np.zeros(self.n)
            b[self._state(y)] = 1.0
            return self._to_box(self.lu.solve(b))
        walk = self.walk
        f = walk.delta(y)
        acc = f.copy()
        for t in range(self.cap):
            f = walk.backward(f)
            acc += f
            if f.max() <= self.tol:
                return acc
        raise ConvergenceError(f"iteration did not settle after {self.cap} steps")

    def apply(self, f: np.ndarray) -> np.ndarray:
        """x -> sum_y G(x, y) f(y) over the domain box; ``f`` is read on the domain."""
        f = np.where(self.domain.mask, f, 0.0)
        if self.method == "lu":
            return self._to_box(self.lu.solve(f[self.domain.mask]))
        walk = self.walk
        acc = f.copy()
        for t in range(self.cap):
            f = walk.backward(f)
            acc += f
            if np.abs(f).max() <= self.tol * max(np.abs(acc).max(), 1.0):
                return acc
        raise ConvergenceError(f"iteration did not settle after {self.cap} steps")

    def exit_time(self) -> np.ndarray:
        """Expected exit time from every starting point, by first-step analysis."""
        if self.method == "lu":
            return self._to_box(self.lu.solve(np.ones(self.n)))
        A = (sp.identity(self.n, format="csr") - transition_matrix(self.env, self.domain)).tocsc()
        tau, info = spla.bicgstab(A, np.ones(self.n), rtol=1e-13, maxiter=self.cap)
        if info != 0:
            raise ConvergenceError("exit-time solve did not converge")
        return self._to_box(tau)


def green_solver(env: Environment, ball: Ball, method: str = "auto") -> GreenSolver:
    key = (env.fingerprint(), ball, method)
    hit = _solvers.get(key)
    if hit is not None:
        return hit
    return _solvers.put(key, GreenSolver(env, Domain.from_ball(ball, env.gamma.reach_int), method))


@dataclass(frozen=True)
class GreenTable:
    """One row ``y -> G(pole, y)`` of a Green function on a ball."""

    ball: Ball
    pole: tuple[int, ...]
    field: MassField
    method: str

    def at(self, y) -> float:
        return self.field.at(y)

    @property
    def row_sum(self) -> float:
        return self.field.total()

    def summary(self) -> dict:
        return {"ball": {"center": list(self.ball.center), "radius": self.ball.radius},
                "pole": list(self.pole), "row_sum": self.row_sum, "method": self.method}


def green_row(env: Environment, ball: Ball, x, method: str = "auto") -> GreenTable:
    x = tuple(int(v) for v in x)
    if not ball.contains(x):
        raise DomainError(f"{x} is outside {ball}")
    key = (env.fingerprint(), ball, x, method)
    hit = _rows.get(key)
    if hit is not None:
        return hit
    solver = green_solver(env, ball, method)
    field = MassField(solver.domain.box, solver.row(x))
    return _rows.put(key, GreenTable(ball, x, field, solver.method))


def exit_time(env: Environment, ball: Ball) -> MassField:
    solver = green_solver(env, ball)
    return MassField(solver.domain.box, solver.exit_time())


# -- caloric problems ---------------------------------------------------------


def solve_caloric(env: Environment, cyl: Cylinder, phi: np.ndarray) -> np.ndarray:
    """Caloric function on ``cyl`` with data ``phi`` on the parabolic boundary.

    ``phi`` and the result are arrays of shape ``(height + 1, *box)`` indexed
    by ``k - a``.  Points off the closure of the cylinder are NaN in the
    result; on the top slice only ``A`` carries values.
    """
    walk = KilledWalk(env, cyl.domain)
    lateral, bottom = walk.boundary, cyl.domain.closure(env.increments)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (cyl.height + 1,) + cyl.domain.box.shape:
        raise ValueError("boundary data has the wrong shape")
    u = np.full(phi.shape, np.nan)
    u[0][bottom] = phi[0][bottom]
    prev = np.where(bottom, phi[0], 0.0)
    for k in range(1, cyl.height + 1):
        cur = walk.backward(prev)
        if k < cyl.height:
            cur = np.where(lateral, phi[k], cur)
        u[k][walk.mask] = cur[walk.mask]
        if k < cyl.height:
            u[k][lateral] = phi[k][lateral]
        prev = cur
    return u


@dataclass
class CaloricMeasure:
    """Exit law of the space-time walk from a cylinder.

    ``weights[k - a]`` holds the mass exiting at time ``k``; the entries are
    supported on the parabolic boundary.
    """

    cylinder: Cylinder
    base: tuple[tuple[int, ...], int]
    weights: np.ndarray

    def total(self) -> float:
        return float(np.sum(self.weights))

    def pair(self, phi: np.ndarray) -> float:
        """sum over the parabolic boundary of phi * omega."""
        mask = self.weights != 0
        return float(np.sum(phi[mask] * self.weights[mask]))

    def mass_of(self, region: np.ndarray) -> float:
        return float(np.sum(self.weights[region]))

    def atoms(self):
        """(k, point, weight) triples for nonzero atoms, ordered by time then lexicographically."""
        box = self.cylinder.domain.box
        idx = np.argwhere(self.weights > 0)
        for row in idx:
            yield (self.cylinder.a + int(row[0]), tuple(int(v) for v in row[1:] + np.asarray(box.lo)),
                   float(self.weights[tuple(row)]))


def caloric_measure(env: Environment, cyl: Cylinder, x0, t0: int, walk: KilledWalk | None = None) -> CaloricMeasure:
    x0 = tuple(int(v) for v in x0)
    if not cyl.is_interior(x0, t0):
        raise DomainError(f"({x0}, {t0}) is not strictly inside the cylinder")
    walk = walk or KilledWalk(env, cyl.domain)
    w = np.zeros((cyl.height + 1,) + cyl.domain.box.shape)
    mu = walk.delta(x0)
    for j in range(1, t0 - cyl.a + 1):
        alive, exited = walk.forward(mu)
        k = t0 - j
        if k > cyl.a:
            w[k - cyl.a] += exited
            mu = alive
        else:
            w[0] += alive + exited
    return CaloricMeasure(cyl, (x0, t0), w)


def caloric_measures(env: Environment, cyl: Cylinder, starts, t0: int, walk: KilledWalk | None = None) -> np.ndarray:
    """Exit laws for many starting points at a common time, batched.

    Returns an array ``(len(starts), height + 1, *box)``.
    """
    walk = walk or KilledWalk(env, cyl.domain)
    starts = [tuple(int(v) for v in x) for x in starts]
    for x in starts:
        if not cyl.is_interior(x, t0):
            raise DomainError(f"({x}, {t0}) is not strictly inside the cylinder")
    mu = np.stack([walk.delta(x) for x in starts])
    w = np.zeros((len(starts), cyl.height + 1) + cyl.domain.box.shape)
    for j in range(1, t0 - cyl.a + 1):
        alive, exited = walk.forward(mu)
        k = t0 - j
        if k > cyl.a:
            w[:, k - cyl.a] += exited
            mu = alive
        else:
            w[:, 0] += alive + exited
    return w


# -- representation formula ---------------------------------------------------


def representation_rhs(env: Environment, ball: Ball, m: np.ndarray, v: np.ndarray,
                       walk: KilledWalk | None = None) -> np.ndarray:
    """Right-hand side of the representation formula for normalized adjoint solutions.

    ``m`` is a positive local adjoint solution and ``v`` a normalized
    parabolic adjoint solution, both on the ball's padded box; ``v`` has a
    leading time axis ``0..T`` and is read only at time 0 inside the ball
    and on the ball's boundary at times ``< T``.  Returns the formula's value
    for ``t = 0..T`` inside the ball.
    """
    walk = walk or KilledWalk(env, Domain.from_ball(ball, env.gamma.reach_int))
    inside, bdry = walk.mask, walk.boundary
    if np.any(m[inside | bdry] <= 0):
        raise ValueError("local adjoint solution must be strictly positive on the closed ball")
    T = v.shape[0] - 1
    out = np.full(v.shape, np.nan)
    W = np.where(inside, m * v[0], 0.0)
    out[0][inside] = v[0][inside]
    for t in range(1, T + 1):
        W, _ = walk.forward(W)
        W = W + walk.inject(m * v[t - 1])
        out[t][inside] = W[inside] / m[inside]
    return out


def representation_check(env: Environment, ball: Ball, m: np.ndarray, v: np.ndarray, window=None) -> float:
    """max |RHS - v| over ``window`` (a boolean (T+1, *box) mask; default all of the ball)."""
    rhs = representation_rhs(env, ball, m, v)
    ok = ~np.isnan(rhs)
    if window is not None:
        ok &= window
    return float(np.max(np.abs(rhs[ok] - v[ok]))) if ok.any() else 0.0
