"""Exact evolution of mass under the walk.

Two directions are kept apart.  Measures move forward,
``(step mu)(y) = sum_e pi(y - e, e) mu(y - e)``, while functions obey the
backward recursion ``(P f)(x) = sum_e pi(x, e) f(x + e)``.
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment
from .lattice import Ball, Box, Domain

GiB = 1 << 30
_budget = contextvars.ContextVar("memory_budget", default=2 * GiB)


class ResourceLimitError(RuntimeError):
    """A requested computation would exceed the memory budget."""


class DomainError(ValueError):
    """A point or field lies outside the region an operation needs."""


def memory_budget() -> int:
    return _budget.get()


@contextlib.contextmanager
def budget(nbytes: int):
    token = _budget.set(int(nbytes))
    try:
        yield
    finally:
        _budget.reset(token)


def check_budget(cells: int, arrays: int, what: str = "field"):
    need = int(cells) * 8 * arrays
    if need > memory_budget():
        raise ResourceLimitError(
            f"{what}: {cells} cells x {arrays} arrays needs {need / GiB:.2f} GiB, budget {memory_budget() / GiB:.2f} GiB")


@dataclass
class MassField:
    """Finitely supported function on a box, with bookkeeping.

    ``escaped`` is mass killed on leaving a domain; ``dropped`` is mass in
    trimmed edge slabs (each below the trimming tolerance).
    """

    box: Box
    values: np.ndarray
    time: int = 0
    escaped: float = 0.0
    dropped: float = 0.0

    def __post_init__(self):
        if self.values.shape != self.box.shape:
            raise ValueError(f"values shape {self.values.shape} does not match box {self.box.shape}")

    @classmethod
    def delta(cls, x, dim: int | None = None) -> MassField:
        x = tuple(int(v) for v in x)
        return cls(Box(x, x), np.ones((1,) * len(x)))

    def total(self) -> float:
        return float(np.sum(self.values))

    def at(self, x) -> float:
        if not self.box.contains(x):
            return 0.0
        return float(self.values[self.box.index(x)])

    def on(self, box: Box) -> np.ndarray:
        """Values laid out over ``box`` (zero where outside the support box)."""
        out = np.zeros(box.shape)
        common = self.box.intersect(box)
        if not common.is_empty:
            out[common.slices_in(box)] = self.values[common.slices_in(self.box)]
        return out

    def items(self):
        """(points, values) for the nonzero entries, lexicographic."""
        idx = np.argwhere(self.values != 0)
        return idx + np.asarray(self.box.lo), self.values[tuple(idx.T)]

    def mean(self) -> np.ndarray:
        w = self.values / self.values.sum()
        return np.array([(w * c).sum() for c in self.box.coords()])


# -- generator and its adjoint ----------------------------------------------


def _inner(env: Environment, box: Box) -> Box:
    inner = box.grow(-env.gamma.reach)
    if inner.is_empty:
        raise DomainError("function box is too small for one step of the walk")
    return inner


def apply_P(env: Environment, f: np.ndarray, box: Box) -> tuple[np.ndarray, Box]:
    """(P f)(x) = sum_e pi(x, e) f(x + e) on the box shrunk by the reach."""
    f = np.asarray(f, dtype=float)
    if f.shape != box.shape:
        raise DomainError("function is not defined on the enlarged box")
    inner = _inner(env, box)
    pi = env.pi_field(inner)
    out = np.zeros(inner.shape)
    for j, e in enumerate(env.increments):
        out += pi[j] * f[inner.shift(e).slices_in(box)]
    return out, inner


def apply_L(env: Environment, f: np.ndarray, box: Box) -> tuple[np.ndarray, Box]:
    """(L f)(x) = sum_e pi(x, e)(f(x + e) - f(x)) on the inner box."""
    pf, inner = apply_P(env, f, box)
    return pf - np.asarray(f, dtype=float)[inner.slices_in(box)], inner


def apply_L_star(env: Environment, g: np.ndarray, box: Box) -> tuple[np.ndarray, Box]:
    """(L* g)(x) = sum_e pi(x - e, e) g(x - e) - g(x) on the inner box."""
    g = np.asarray(g, dtype=float)
    if g.shape != box.shape:
        raise DomainError("function is not defined on the enlarged box")
    inner = _inner(env, box)
    pi = env.pi_field(box)
    out = -g[inner.slices_in(box)]
    for j, e in enumerate(env.increments):
        src = inner.shift(-e).slices_in(box)
        out = out + pi[j][src] * g[src]
    return out, inner


def apply_L_tilde(env: Environment, f: np.ndarray, box: Box) -> tuple[np.ndarray, Box]:
    """Same as :func:`apply_L`; named for the duality pairing with L*."""
    return apply_L(env, f, box)


# -- free evolution -----------------------------------------------------------


class _PiCache:
    """pi_field over a reservoir box that grows geometrically on demand."""

    def __init__(self, env: Environment):
        self.env = env
        self.constant = env.is_translation_invariant
        self.row = env.class_rows()[0] if self.constant else None
        self.box: Box | None = None
        self.field = None

    def get(self, box: Box):
        if self.constant:
            return None
        if self.box is None or not self.box.contains_box(box):
            grow = max(8, max(box.shape) // 4)
            target = box.grow(grow) if self.box is None else box.union(self.box).grow(grow)
            check_budget(target.size, self.env.gamma.size, "environment field")
            self.box = target
            self.field = self.env.pi_field(target)
        sl = box.slices_in(self.box)
        return self.field[(slice(None),) + sl]


def _step_values(env: Environment, mu: np.ndarray, box: Box, cache: _PiCache) -> tuple[np.ndarray, Box]:
    reach = env.gamma.reach
    new_box = box.grow(reach)
    check_budget(new_box.size, 3, "kernel")
    out = np.zeros(new_box.shape)
    pi = cache.get(box)
    tmp = np.empty_like(mu)
    for j, e in enumerate(env.increments):
        if pi is None:
            np.multiply(mu, cache.row[j], out=tmp)
        else:
            np.multiply(mu, pi[j], out=tmp)
        dst = out[box.shift(e).slices_in(new_box)]
        np.add(dst, tmp, out=dst)
    return out, new_box


def _trim(values: np.ndarray, box: Box, tol: float, keep: Box) -> tuple[np.ndarray, Box, float]:
    """Drop edge slabs whose mass is <= tol, never cutting into ``keep``."""
    dropped = 0.0
    lo, hi = list(box.lo), list(box.hi)
    sl = [slice(0, n) for n in values.shape]
    for axis in range(values.ndim):
        while hi[axis] > max(lo[axis], keep.hi[axis]):
            idx = list(sl)
            idx[axis] = sl[axis].stop - 1
            m = values[tuple(idx)].sum()
            if m > tol:
                break
            dropped += m
            sl[axis] = slice(sl[axis].start, sl[axis].stop - 1)
            hi[axis] -= 1
        while lo[axis] < min(hi[axis], keep.lo[axis]):
            idx = list(sl)
            idx[axis] = sl[axis].start
            m = values[tuple(idx)].sum()
            if m > tol:
                break
            dropped += m
            sl[axis] = slice(sl[axis].start + 1, sl[axis].stop)
            lo[axis] += 1
    if dropped == 0.0 and all(s.start == 0 and s.stop == n for s, n in zip(sl, values.shape)):
        return values, box, 0.0
    return np.ascontiguousarray(values[tuple(sl)]), Box(tuple(lo), tuple(hi)), float(dropped)


def step(env: Environment, mu: MassField, trim_tol: float = 0.0, _cache: _PiCache | None = None) -> MassField:
    """One forward step of a measure; support grows by the increment reach.

    With ``trim_tol > 0`` edge slabs carrying at most ``trim_tol`` mass are
    removed and accounted in ``dropped``.
    """
    cache = _cache or _PiCache(env)
    vals, box = _step_values(env, mu.values, mu.box, cache)
    dropped = 0.0
    if trim_tol > 0:
        vals, box, dropped = _trim(vals, box, trim_tol, Box(mu.box.lo, mu.box.lo))
    return MassField(box, vals, mu.time + 1, mu.escaped, mu.dropped + dropped)


def kernel_rows(env: Environment, x, times, trim_tol: float = 1e-20):
    """Yield ``(n, p_n(x, .))`` for each requested n in increasing order."""
    times = sorted(set(int(n) for n in times))
    if times and times[0] < 0:
        raise ValueError("n must be >= 0")
    if times:
        worst = Box.around(x, np.asarray(env.gamma.reach) * times[-1])
        if trim_tol <= 0:
            check_budget(worst.size, 3, "kernel")
    cache = _PiCache(env)
    mu = MassField.delta(x)
    for n in times:
        while mu.time < n:
            mu = step(env, mu, trim_tol, cache)
        yield n, mu


def kernel_row(env: Environment, x, n: int, trim_tol: float = 1e-20) -> MassField:
    """p_n(x, .) as a mass field, by n forward steps from a point mass."""
    for _, mu in kernel_rows(env, x, [n], trim_tol):
        return mu


# -- killed evolution -----------------------------------------------------------


class KilledWalk:
    """The walk absorbed on leaving a finite domain ``A``.

    Arrays live on ``domain.box``.  Forward steps move measures supported in
    ``A`` and report the mass landing outside; backward steps evaluate
    ``sum_e pi(x, e) u(x + e)`` for ``x`` in ``A`` given ``u`` on the closure.
    Leading batch axes are allowed in both directions.
    """

    def __init__(self, env: Environment, domain: Domain):
        self.env = env
        self.domain = domain
        box = domain.box
        check_budget(box.size, env.gamma.size + 4, "killed walk")
        reach = env.gamma.reach
        self.inner = box.grow(-reach)
        if self.inner.is_empty or not self.inner.contains_box(_mask_box(domain)):
            raise DomainError("domain padding is smaller than the increment reach")
        pi = env.pi_field(self.inner)
        m = domain.mask[self.inner.slices_in(box)]
        self.weights = pi * m  # rows only at sources in A
        self.slices = [self.inner.shift(e).slices_in(box) for e in env.increments]
        self.src = self.inner.slices_in(box)
        self.mask = domain.mask
        self.boundary = domain.boundary(env.increments)
        self._feeds = None

    @property
    def box(self) -> Box:
        return self.domain.box

    def forward(self, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(alive, exited): mass after one step inside A and outside it."""
        lead = mu.shape[: mu.ndim - self.box.dim]
        src = mu[(Ellipsis,) + self.src]
        out = np.zeros(lead + self.box.shape)
        for j, sl in enumerate(self.slices):
            out[(Ellipsis,) + sl] += self.weights[j] * src
        exited = np.where(self.mask, 0.0, out)
        alive = np.where(self.mask, out, 0.0)
        return alive, exited

    def backward(self, u: np.ndarray) -> np.ndarray:
        """(P u)(x) for x in A, zero elsewhere; ``u`` given on the closure."""
        lead = u.shape[: u.ndim - self.box.dim]
        out = np.zeros(lead + self.box.shape)
        acc = out[(Ellipsis,) + self.src]
        for j, sl in enumerate(self.slices):
            acc += self.weights[j] * u[(Ellipsis,) + sl]
        return out

    def inject(self, g: np.ndarray) -> np.ndarray:
        """sum over boundary z of pi(z, x - z) g(z), for x in A (zero elsewhere).

        Boundary points can lie on the edge of the padded box, so the sum is
        gathered at targets in the inner box from sources ``x - e``.
        """
        if self._feeds is None:
            feeds = []
            for j, e in enumerate(self.env.increments):
                origin = self.inner.shift(-np.asarray(e))
                sl = origin.slices_in(self.box)
                feeds.append((sl, self.env.pi_field(origin)[j] * self.boundary[sl]))
            self._feeds = feeds
        lead = g.shape[: g.ndim - self.box.dim]
        g = np.where(self.boundary, g, 0.0)
        out = np.zeros(lead + self.box.shape)
        acc = out[(Ellipsis,) + self.src]
        for sl, w in self._feeds:
            acc += w * g[(Ellipsis,) + sl]
        return np.where(self.mask, out, 0.0)

    def delta(self, x) -> np.ndarray:
        if not self.domain.contains(x):
            raise DomainError(f"{tuple(x)} is not inside the domain")
        mu = np.zeros(self.box.shape)
        mu[self.box.index(x)] = 1.0
        return mu

    def evolve(self, mu: np.ndarray, t: int):
        """Yield (time, alive, exited) for 1..t starting from ``mu``."""
        for s in range(1, t + 1):
            mu, exited = self.forward(mu)
            yield s, mu, exited

    def kernel(self, x, t: int) -> MassField:
        mu = self.delta(x)
        escaped = 0.0
        for _, mu, exited in self.evolve(mu, t):
            escaped += float(exited.sum())
        return MassField(self.box, mu, t, escaped)

    def kernel_stack(self, x, t: int) -> np.ndarray:
        """h_s(x, .) for s = 0..t, shape (t + 1, *box)."""
        out = np.empty((t + 1,) + self.box.shape)
        out[0] = self.delta(x)
        for s, mu, _ in self.evolve(out[0], t):
            out[s] = mu
        return out


def _mask_box(domain: Domain) -> Box:
    idx = np.argwhere(domain.mask)
    return Box(tuple(np.add(domain.box.lo, idx.min(axis=0))), tuple(np.add(domain.box.lo, idx.max(axis=0))))


def ball_walk(env: Environment, ball: Ball) -> KilledWalk:
    return KilledWalk(env, Domain.from_ball(ball, env.gamma.reach_int))


def killed_step(env: Environment, ball: Ball, mu: MassField) -> MassField:
    """One step of the walk killed outside ``ball``; killed mass goes to ``escaped``."""
    walk = ball_walk(env, ball)
    vals = mu.on(walk.box)
    if np.any(vals[~walk.mask] != 0):
        raise DomainError("measure has mass outside the ball")
    alive, exited = walk.forward(vals)
    return MassField(walk.box, alive, mu.time + 1, mu.escaped + float(exited.sum()), mu.dropped)


def killed_kernel(env: Environment, ball: Ball, x, t: int) -> MassField:
    """h_t(x, .) of the walk killed outside ``ball``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if not ball.contains(x):
        raise DomainError(f"{tuple(x)} is outside {ball}")
    return ball_walk(env, ball).kernel(x, t)
