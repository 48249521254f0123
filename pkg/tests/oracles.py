"""Reference computations built from scratch with dense linear algebra.

They only use ``Environment.pi_points`` and plain numpy, so they share no
code path with the sparse/stencil implementations under test.
"""
from __future__ import annotations

import itertools
from fractions import Fraction
from math import comb

import numpy as np


def lazy_return_probability(n: int, hold=Fraction(1, 2)) -> Fraction:
    """P(S_n = 0) for the d=1 walk holding with ``hold`` and stepping +-1 equally."""
    hold = Fraction(hold)
    q = (1 - hold) / 2
    return sum(comb(n, 2 * k) * comb(2 * k, k) * q ** (2 * k) * hold ** (n - 2 * k) for k in range(n // 2 + 1))


def lazy_kernel(n: int, hold=Fraction(1, 2)) -> dict[int, Fraction]:
    """Exact law of S_n for the lazy d=1 walk, as a dict x -> probability."""
    hold = Fraction(hold)
    q = (1 - hold) / 2
    out: dict[int, Fraction] = {}
    for up in range(n + 1):
        for down in range(n - up + 1):
            w = comb(n, up) * comb(n - up, down) * q ** (up + down) * hold ** (n - up - down)
            out[up - down] = out.get(up - down, 0) + w
    return out


def ball_points(center, radius: float) -> list[tuple[int, ...]]:
    """Lattice points of the open ball, lexicographic."""
    center = np.asarray(center, dtype=int)
    R = int(np.ceil(radius))
    pts = []
    for off in itertools.product(range(-R, R + 1), repeat=len(center)):
        if sum(o * o for o in off) < radius * radius:
            pts.append(tuple(int(v) for v in center + np.asarray(off)))
    return sorted(pts)


def substochastic_matrix(env, points) -> np.ndarray:
    """P restricted to ``points``: rows lose the mass that leaves the set."""
    index = {p: i for i, p in enumerate(points)}
    P = np.zeros((len(points), len(points)))
    rows = env.pi_points(np.asarray(points))
    for i, x in enumerate(points):
        for j, e in enumerate(env.increments):
            y = tuple(int(a + b) for a, b in zip(x, e))
            if y in index:
                P[i, index[y]] += rows[i, j]
    return P


def killed_powers(env, points, x, t_max: int) -> np.ndarray:
    """Rows of P_A^t from x for t = 0..t_max, shape (t_max + 1, len(points))."""
    P = substochastic_matrix(env, points)
    out = np.zeros((t_max + 1, len(points)))
    out[0, points.index(tuple(x))] = 1.0
    for t in range(1, t_max + 1):
        out[t] = out[t - 1] @ P
    return out


def dense_green(env, points) -> np.ndarray:
    P = substochastic_matrix(env, points)
    return np.linalg.inv(np.eye(len(points)) - P)


def dense_exit_time(env, points) -> np.ndarray:
    P = substochastic_matrix(env, points)
    return np.linalg.solve(np.eye(len(points)) - P, np.ones(len(points)))


def torus_stationary(env, period: int) -> dict[tuple[int, ...], float]:
    """Invariant measure of the walk folded onto (Z / period)^d, normalized to 1 at 0."""
    d = env.dimension
    sites = list(itertools.product(range(period), repeat=d))
    index = {s: i for i, s in enumerate(sites)}
    A = np.zeros((len(sites), len(sites)))
    rows = env.pi_points(np.asarray(sites))
    for i, x in enumerate(sites):
        for j, e in enumerate(env.increments):
            y = tuple(int(v) % period for v in np.add(x, e))
            A[i, index[y]] += rows[i, j]
    w, v = np.linalg.eig(A.T)
    m = np.real(v[:, int(np.argmin(np.abs(w - 1)))])
    m = m / m[index[(0,) * d]]
    return {s: float(m[i]) for s, i in index.items()}


def lattice_ball_count(d: int, r: float) -> int:
    return len(ball_points((0,) * d, r))
