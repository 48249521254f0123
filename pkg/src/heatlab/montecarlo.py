"""Trajectory simulation as an independent check of the exact kernels.

Random numbers come from counter-based Philox streams.  Path ``i`` belongs
to block ``i // BLOCK``; each block owns the key ``(seed, stream)`` and a
counter offset equal to its index, so the histogram does not depend on how
blocks are scheduled or how many workers run them.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment
from .kernel import DomainError, MassField
from .lattice import Box, Cylinder

BLOCK = 65536


def alias_tables(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vose alias tables, one per row: (accept probability, alias column)."""
    rows = np.asarray(rows, dtype=float)
    c, k = rows.shape
    prob = np.ones((c, k))
    alias = np.tile(np.arange(k), (c, 1))
    for r in range(c):
        p = rows[r] * k / rows[r].sum()
        small = [j for j in range(k) if p[j] < 1.0]
        large = [j for j in range(k) if p[j] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            prob[r, s] = p[s]
            alias[r, s] = l
            p[l] -= 1.0 - p[s]
            (small if p[l] < 1.0 else large).append(l)
        for j in small + large:
            prob[r, j] = 1.0
    return prob, alias


@dataclass
class PathSampler:
    """Walks in one environment; deterministic in (seed, stream, path index)."""

    env: Environment
    seed: int = 0
    stream: int = 0
    _tables: tuple = field(default=None, repr=False)

    def __post_init__(self):
        self._tables = alias_tables(self.env.class_rows())
        self._inc = np.asarray(self.env.increments, dtype=np.int64)

    def generator(self, block: int) -> np.random.Generator:
        bits = np.random.Philox(key=[int(self.seed) % 2**64, int(self.stream) % 2**64], counter=[0, 0, int(block), 0])
        return np.random.Generator(bits)

    def steps(self, rng: np.random.Generator, pos: np.ndarray) -> np.ndarray:
        """One increment for every row of ``pos``."""
        prob, alias = self._tables
        k = prob.shape[1]
        cls = self.env.class_index(pos)
        u = rng.random(len(pos)) * k
        j = np.minimum(u.astype(np.int64), k - 1)
        keep = (u - j) < prob[cls, j]
        j = np.where(keep, j, alias[cls, j])
        return self._inc[j]

    def endpoints(self, x0, n: int, block: int, count: int) -> np.ndarray:
        rng = self.generator(block)
        pos = np.tile(np.asarray(x0, dtype=np.int64), (count, 1))
        for _ in range(n):
            pos += self.steps(rng, pos)
        return pos


def _blocks(N: int):
    return [(b, min(BLOCK, N - b * BLOCK)) for b in range((N + BLOCK - 1) // BLOCK)]


def _histogram(points: np.ndarray, box: Box) -> np.ndarray:
    idx = np.ravel_multi_index(tuple((points - np.asarray(box.lo)).T), box.shape)
    return np.bincount(idx, minlength=box.size).reshape(box.shape).astype(np.int64)


def sample_paths(env: Environment, x0, n: int, N: int, seed: int = 0, stream: int = 0, jobs: int = 1) -> MassField:
    """Empirical law of S_n from N paths started at x0 (counts divided by N)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    x0 = tuple(int(v) for v in x0)
    sampler = PathSampler(env, seed, stream)
    reach = np.asarray(env.gamma.reach, dtype=np.int64)
    box = Box(tuple(np.subtract(x0, n * reach)), tuple(np.add(x0, n * reach)))

    def run(block):
        b, count = block
        return _histogram(sampler.endpoints(x0, n, b, count), box)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        hists = list(pool.map(run, _blocks(N)))
    counts = np.sum(hists, axis=0)
    return MassField(box, counts / N, n)


def sample_exit(env: Environment, cyl: Cylinder, x0, t0: int, N: int, seed: int = 0, stream: int = 0,
                jobs: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Empirical caloric measure of the space-time walk (S_j, t0 - j) from (x0, t0).

    Returns (frequencies, exit times) where frequencies has shape
    ``(height + 1, *box)`` indexed by ``k - a`` like the exact measure and
    exit times has one entry per path (number of steps taken).
    """
    x0 = tuple(int(v) for v in x0)
    if not cyl.is_interior(x0, t0):
        raise DomainError(f"({x0}, {t0}) is not strictly inside the cylinder")
    sampler = PathSampler(env, seed, stream)
    dom = cyl.domain
    box = dom.box
    lo = np.asarray(box.lo)

    def run(block):
        b, count = block
        rng = sampler.generator(b)
        pos = np.tile(np.asarray(x0, dtype=np.int64), (count, 1))
        alive = np.ones(count, dtype=bool)
        k_exit = np.full(count, cyl.a, dtype=np.int64)
        for j in range(1, t0 - cyl.a + 1):
            live = np.flatnonzero(alive)
            if len(live) == 0:
                break
            pos[live] += sampler.steps(rng, pos[live])
            k = t0 - j
            inside = dom.mask[tuple((pos[live] - lo).T)]
            if k > cyl.a:
                out = live[~inside]
                k_exit[out] = k
                alive[out] = False
            else:
                alive[live] = False  # bottom absorbs, inside or not
        counts = np.zeros((cyl.height + 1,) + box.shape, dtype=np.int64)
        np.add.at(counts, (k_exit - cyl.a,) + tuple((pos - lo).T), 1)
        return counts, t0 - k_exit

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        parts = list(pool.map(run, _blocks(N)))
    counts = np.sum([p[0] for p in parts], axis=0)
    times = np.concatenate([p[1] for p in parts])
    return counts / N, times


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def atom_zscores(empirical: np.ndarray, exact: np.ndarray, N: int) -> np.ndarray:
    """|p_hat - p| / sqrt(p (1 - p) / N) per atom; atoms with p = 0 score
    inf when hit and 0 otherwise."""
    p = np.asarray(exact, float)
    q = np.asarray(empirical, float)
    sd = np.sqrt(np.clip(p * (1 - p), 0, None) / N)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, np.abs(q - p) / np.where(sd > 0, sd, 1.0), np.where(q != p, np.inf, 0.0))
    return z
