"""Positive solutions of the adjoint equation L* m = 0.

The global solution M is approached through level solutions
``m_l = alpha_l (G_{l+1}(p, .) - G_l(p, .))`` built from Green functions on
the nested balls of radius ``2**l``, each normalized to equal 1 at the
origin.  Levels are enlarged until the values on a fixed window settle.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .environment import Environment
from .kernel import DomainError, MassField, apply_L_star, kernel_rows
from .lattice import Ball, Box, lexicographic_annulus_point
from .potential import green_row
from .report import EstimateReport

log = logging.getLogger(__name__)

CLAMP = 1e-13


class WindowError(DomainError):
    """A query reaches outside the window on which M is known."""


class NonPositiveDifference(ArithmeticError):
    pass


@dataclass
class LevelSolution:
    level: int
    center: tuple[int, ...]
    pole: tuple[int, ...]
    box: Box
    values: np.ndarray
    alpha: float
    clamped: int = 0

    @property
    def ball(self) -> Ball:
        return Ball(self.center, 2**self.level)

    def on(self, window: Box) -> np.ndarray:
        return self.values[window.slices_in(self.box)]


def level_solution(env: Environment, l: int, center=None, pole=None, method: str = "auto",
                   clamp: bool = True) -> LevelSolution:
    """m_l on the closed ball of radius 2**l, normalized so m_l(0) = 1.

    Differences of Green functions below ``CLAMP`` are raised to ``CLAMP``
    and counted; with ``clamp=False`` any nonpositive difference inside the
    ball raises instead.
    """
    if l < 1:
        raise ValueError("levels start at 1")
    d = env.dimension
    center = tuple(int(v) for v in (center if center is not None else (0,) * d))
    pole = tuple(int(v) for v in (pole if pole is not None else center))
    inner, outer = Ball(center, 2**l), Ball(center, 2 ** (l + 1))
    origin = (0,) * d
    if not inner.contains(origin) or not inner.contains(pole):
        raise DomainError("the ball must contain the origin and the pole")
    g_small = green_row(env, inner, pole, method).field
    g_big = green_row(env, outer, pole, method).field
    box = g_small.box
    diff = g_big.on(box) - g_small.values
    closure = _closure_mask(env, inner, box)
    low = closure & (diff < CLAMP)
    clamped = int(low.sum())
    if clamped:
        if not clamp:
            raise NonPositiveDifference(f"{clamped} Green differences below {CLAMP} at level {l}")
        log.warning("level %d: clamped %d Green differences to %g", l, clamped, CLAMP)
        diff = np.where(low, CLAMP, diff)
    diff = np.where(closure, diff, 0.0)
    a = 1.0 / diff[box.index(origin)]
    return LevelSolution(l, center, pole, box, diff * a, a, clamped)


def _closure_mask(env: Environment, ball: Ball, box: Box) -> np.ndarray:
    from .lattice import Domain

    dom = Domain(box, ball.mask(box))
    return dom.closure(env.increments)


@dataclass
class AdjointSolution:
    """M on a window, normalized so that M(0) = 1."""

    window: Box
    values: np.ndarray
    level: int
    converged: bool
    tol: float
    residual: float
    history: list = field(default_factory=list)
    clamped: int = 0
    extrapolated: bool = True
    center: tuple[int, ...] = ()
    pole: tuple[int, ...] = ()

    @property
    def dim(self) -> int:
        return self.window.dim

    def at(self, x) -> float:
        if not self.window.contains(x):
            raise WindowError(f"{tuple(x)} is outside the window {self.window}")
        return float(self.values[self.window.index(x)])

    def on(self, box: Box) -> np.ndarray:
        if not self.window.contains_box(box):
            raise WindowError(f"{box} is not inside the window {self.window}")
        return self.values[box.slices_in(self.window)]

    def metadata(self) -> dict:
        return {
            "window": {"lo": list(self.window.lo), "hi": list(self.window.hi)},
            "level": self.level,
            "converged": self.converged,
            "tol": self.tol,
            "residual": self.residual,
            "normalization": {"point": [0] * self.dim, "value": self.at((0,) * self.dim)},
            "clamped": self.clamped,
            "extrapolated": self.extrapolated,
            "center": list(self.center),
            "pole": list(self.pole),
            "history": self.history,
        }

    def volume(self, x, r: float) -> float:
        return volume(self, x, r)


def _window_box(window, d: int) -> Box:
    if isinstance(window, Box):
        return window
    return Box.around((0,) * d, int(window))


def _fits(ball: Ball, box: Box) -> bool:
    corners = np.array(np.meshgrid(*[[lo, hi] for lo, hi in zip(box.lo, box.hi)], indexing="ij")).reshape(box.dim, -1).T
    return all(ball.contains(c) for c in corners)


def adjoint_residual(env: Environment, values: np.ndarray, window: Box) -> float:
    """sup |L* M| / sup M over the interior of the window."""
    res, _ = apply_L_star(env, values, window)
    return float(np.abs(res).max() / np.abs(values).max())


def build_M(env: Environment, window=16, tol: float = 1e-8, l_max: int = 10, l_min: int | None = None,
            extrapolate: bool = True, center=None, pole=None, method: str = "auto") -> AdjointSolution:
    """Global adjoint solution on a window, by enlarging levels until it settles.

    The estimate at level ``l`` is ``m_l`` or, with ``extrapolate``, the
    combination ``(4 m_{l+1} - m_l) / 3`` which cancels the leading
    ``2**(-2l)`` finite-ball error.  Iteration stops at the first level whose
    estimate differs from the previous one by at most ``tol`` in sup norm on
    the window; otherwise the last level is returned with ``converged`` false.
    """
    d = env.dimension
    win = _window_box(window, d)
    center = tuple(int(v) for v in (center if center is not None else (0,) * d))
    if l_min is None:
        l_min = 1
        while not (_fits(Ball(center, 2**l_min), win) and Ball(center, 2**l_min).contains((0,) * d)):
            l_min += 1
    if l_min > l_max:
        raise WindowError(f"window {win} does not fit inside the ball of level {l_max}")

    history, clamped = [], 0
    levels: dict[int, np.ndarray] = {}

    def m(l):
        nonlocal clamped
        if l not in levels:
            sol = level_solution(env, l, center, pole, method)
            clamped += sol.clamped
            levels[l] = sol.on(win)
            history.append({"level": l, "alpha": sol.alpha, "clamped": sol.clamped})
        return levels[l]

    use_extra = extrapolate and l_max > l_min

    def estimate(l):
        return (4.0 * m(l + 1) - m(l)) / 3.0 if use_extra else m(l)

    last_level = l_max - 1 if use_extra else l_max
    prev, converged, level = None, False, l_min
    for level in range(l_min, last_level + 1):
        cur = estimate(level)
        if prev is not None:
            diff = float(np.abs(cur - prev).max())
            history.append({"level": level, "sup_change": diff})
            if diff <= tol:
                converged = True
                prev = cur
                break
        prev = cur
    values = prev / prev[win.index((0,) * d)]
    if np.any(values <= 0):
        raise NonPositiveDifference("adjoint estimate is not positive on the window")
    if not converged:
        log.warning("adjoint construction did not reach tol=%g by level %d", tol, level)
    return AdjointSolution(win, values, level, converged, tol, adjoint_residual(env, values, win), history,
                           clamped, use_extra, center, tuple(pole) if pole is not None else center)


def constant_adjoint(env: Environment, window) -> AdjointSolution:
    """M = 1, the adjoint solution of a translation-invariant walk."""
    if not env.is_translation_invariant:
        raise ValueError("only translation-invariant walks have constant adjoint solutions")
    win = _window_box(window, env.dimension)
    vals = np.ones(win.shape)
    return AdjointSolution(win, vals, 0, True, 0.0, adjoint_residual(env, vals, win), [], 0, False)


# -- local solutions -----------------------------------------------------------


@dataclass
class LocalAdjoint:
    """m(x) = G(x*, x) with the pole x* in an annulus; adjoint-harmonic on ``valid``."""

    box: Box
    values: np.ndarray
    pole: tuple[int, ...]
    green_ball: Ball
    valid: Ball

    def on(self, box: Box) -> np.ndarray:
        return self.values[box.slices_in(self.box)]


def green_adjoint(env: Environment, center, r_in: float, r_out: float, r_green: float,
                  method: str = "auto") -> LocalAdjoint:
    """m(x) = G(x*, x) for the Green function of B_{r_green}(center).

    x* is the lexicographically smallest lattice point with
    ``r_in <= |x* - center| < r_out``; m solves L* m = 0 away from x*.
    """
    center = tuple(int(v) for v in center)
    pole = lexicographic_annulus_point(center, r_in, r_out)
    ball = Ball(center, r_green)
    row = green_row(env, ball, pole, method).field
    valid = Ball(center, max(r_in - env.gamma.diam, 0))
    return LocalAdjoint(row.box, row.values, pole, ball, valid)


def local_adjoint(env: Environment, r0: float, center=None) -> LocalAdjoint:
    """Positive adjoint solution for domains inside B_{r0}: pole in B_{4r0} minus B_{3r0}, Green function of B_{5r0}."""
    center = center if center is not None else (0,) * env.dimension
    return green_adjoint(env, center, 3 * r0, 4 * r0, 5 * r0)


# -- volumes -------------------------------------------------------------------


def ball_offsets(d: int, r: float):
    """(prefix offset, half-width) pairs covering the open ball of radius r.

    For each offset ``o`` in the first d-1 coordinates with ``|o| < r`` the
    last coordinate ranges over ``|k| <= h`` where h is the largest integer
    with ``|o|^2 + h^2 < r^2``.
    """
    k = max(math.ceil(r) - 1, 0)
    out = []
    for o in np.ndindex(*([2 * k + 1] * (d - 1))):
        o = tuple(v - k for v in o)
        rem = r * r - sum(v * v for v in o)
        if rem <= 0:
            continue
        h = math.ceil(math.sqrt(rem)) - 1
        while h * h >= rem:
            h -= 1
        while (h + 1) ** 2 < rem:
            h += 1
        out.append((o, h))
    return out


def ball_sums(values: np.ndarray, box: Box, r: float, centers: Box) -> np.ndarray:
    """sum_{|z - x| < r} values(z) for every x in ``centers``."""
    need = centers.grow(max(math.ceil(r) - 1, 0))
    if not box.contains_box(need):
        raise WindowError(f"balls of radius {r} around {centers} leave the window {box}")
    d = box.dim
    out = np.zeros(centers.shape)
    csum = np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(values, axis=-1)], axis=-1)
    last_lo = centers.lo[-1] - box.lo[-1]
    n_last = centers.shape[-1]
    for o, h in ball_offsets(d, r):
        pre = tuple(slice(cl + ov - bl, cl + ov - bl + n) for cl, ov, bl, n in
                    zip(centers.lo[:-1], o, box.lo[:-1], centers.shape[:-1]))
        hi = csum[pre + (slice(last_lo + h + 1, last_lo + h + 1 + n_last),)]
        lo = csum[pre + (slice(last_lo - h, last_lo - h + n_last),)]
        out += hi - lo
    return out


def volume(M: AdjointSolution, x, r: float) -> float:
    """V(x, r) = sum of M over the open ball B_r(x)."""
    x = tuple(int(v) for v in x)
    ball = Ball(x, r)
    box = ball.box
    if not M.window.contains_box(box):
        raise WindowError(f"B_{r}({x}) leaves the window {M.window}")
    return float(np.sum(M.on(box)[ball.mask(box)]))


def volume_field(M: AdjointSolution, r: float, centers: Box) -> np.ndarray:
    return ball_sums(M.values, M.window, r, centers)


def doubling_report(env: Environment, M: AdjointSolution, centers: Box, radii,
                    estimate: str = "volume_doubling") -> EstimateReport:
    """max over centers of V(x, 2r) / V(x, r) for each radius."""
    rep = EstimateReport(estimate, env.fingerprint(),
                         grid={"centers": {"lo": list(centers.lo), "hi": list(centers.hi)},
                               "radii": [float(r) for r in radii]})
    per_r = []
    for r in radii:
        v1 = volume_field(M, r, centers)
        v2 = volume_field(M, 2 * r, centers)
        ratio = v2 / v1
        i = np.unravel_index(np.argmax(ratio), ratio.shape)
        x = tuple(int(a + b) for a, b in zip(i, centers.lo))
        per_r.append(float(ratio[i]))
        rep.rows.append({"r": float(r), "max_ratio": float(ratio[i]), "min_ratio": float(ratio.min()), "argmax": list(x)})
    k = int(np.argmax(per_r))
    rep.constants["C"] = max(per_r)
    rep.constants["per_radius"] = per_r
    rep.witness = {"r": float(radii[k]), "x": rep.rows[k]["argmax"]}
    rep.verdicts["finite"] = bool(np.all(np.isfinite(per_r)))
    return rep


# -- normalized parabolic adjoint solutions ---------------------------------------


@dataclass
class NormalizedAdjoint:
    """v(y, t) = p_t(x0, y) / M(y) on M's window."""

    env: Environment
    M: AdjointSolution
    x0: tuple[int, ...]
    trim_tol: float = 0.0

    def fields(self, times, region: Box | None = None):
        """Yield (t, v(., t)) over ``region`` (default: the window)."""
        target = region or self.M.window
        m = self.M.on(target)
        for t, p in kernel_rows(self.env, self.x0, times, self.trim_tol):
            if region is None and not self.M.window.contains_box(_support(p)):
                raise WindowError(f"kernel support at t={t} leaves the window {self.M.window}")
            yield t, p.on(target) / m

    def at(self, y, t: int) -> float:
        y = tuple(int(v) for v in y)
        for _, f in self.fields([t], Box(y, y)):
            return float(f.ravel()[0])

    def mass(self, t: int) -> float:
        """sum_y v(y, t) M(y) over the window."""
        for _, f in self.fields([t]):
            return float(np.sum(f * self.M.values))


def _support(p: MassField) -> Box:
    idx = np.argwhere(p.values > 0)
    return Box(tuple(idx.min(axis=0) + p.box.lo), tuple(idx.max(axis=0) + p.box.lo))


def normalized_adjoint(env: Environment, M: AdjointSolution, x0) -> NormalizedAdjoint:
    x0 = tuple(int(v) for v in x0)
    if np.any(M.values <= 0):
        raise ValueError("M must be positive on its window")
    return NormalizedAdjoint(env, M, x0)
