"""Walk environments: the transition rule pi(x, e) on Z^d.

Every environment is backed by a table of probability rows over a box of
sites, extended to the whole lattice either periodically, by a constant row
outside the box, or (for translation-invariant rules) by the single row.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from .lattice import Box

FLOAT_TOL = 1e-12
KINDS = ("constant", "periodic", "random", "tabulated")
EXTENSIONS = ("periodic", "constant-outside", "analytic")


class SpecError(ValueError):
    """Malformed or infeasible environment description."""


class InvalidEnvironment(ValueError):
    def __init__(self, violations):
        self.violations = violations
        head = "; ".join(str(v) for v in violations[:5])
        super().__init__(f"{len(violations)} violation(s): {head}")


@dataclass(frozen=True, eq=False)
class IncrementSet:
    """Finite symmetric increment set containing 0 and the unit vectors."""

    increments: np.ndarray

    def __post_init__(self):
        inc = np.array(self.increments, dtype=np.int64, copy=True)
        if inc.ndim != 2 or inc.shape[0] == 0 or inc.shape[1] == 0:
            raise SpecError("increments must be a non-empty list of integer vectors")
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)
        keys = [tuple(e) for e in inc.tolist()]
        if len(set(keys)) != len(keys):
            raise SpecError("duplicate increments")
        d = inc.shape[1]
        required = [(0,) * d] + [tuple(int(s * (i == j)) for j in range(d)) for i in range(d) for s in (1, -1)]
        missing = [r for r in required if r not in keys]
        if missing:
            raise SpecError(f"increment set must contain 0 and all unit vectors; missing {missing}")
        asym = [k for k in keys if tuple(-v for v in k) not in keys]
        if asym:
            raise SpecError(f"increment set is not symmetric: {asym}")
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(keys)})

    @classmethod
    def nearest(cls, d: int) -> IncrementSet:
        """{0, +e1, -e1, ..., +ed, -ed}."""
        rows = [[0] * d]
        for i in range(d):
            for s in (1, -1):
                e = [0] * d
                e[i] = s
                rows.append(e)
        return cls(np.array(rows))

    @property
    def dimension(self) -> int:
        return int(self.increments.shape[1])

    @property
    def size(self) -> int:
        return int(self.increments.shape[0])

    @property
    def diam(self) -> float:
        return float(np.sqrt((self.increments**2).sum(axis=1)).max())

    @property
    def reach(self) -> np.ndarray:
        """Per-axis maximal |e_i|."""
        return np.abs(self.increments).max(axis=0)

    @property
    def reach_int(self) -> int:
        return int(self.reach.max())

    def index(self, e) -> int:
        try:
            return self._index[tuple(int(v) for v in e)]
        except KeyError:
            raise KeyError(f"{tuple(e)} is not an increment") from None

    @property
    def negation(self) -> np.ndarray:
        """negation[i] is the index of -increments[i]."""
        return np.array([self.index(-e) for e in self.increments])

    def pairs(self) -> list[tuple[int, ...]]:
        """Unordered pairs {e, -e} as index tuples; the zero increment is alone."""
        seen, out = set(), []
        for i, j in enumerate(self.negation):
            if i in seen:
                continue
            seen.update((i, int(j)))
            out.append((i,) if i == j else (i, int(j)))
        return out

    def tolist(self) -> list[list[int]]:
        return self.increments.tolist()


@dataclass(frozen=True)
class Violation:
    site: tuple[int, ...] | None
    increment: tuple[int, ...] | None
    condition: str
    detail: str = ""

    def __str__(self):
        where = "outside-box" if self.site is None else f"site {self.site}"
        inc = "" if self.increment is None else f" e={self.increment}"
        return f"{self.condition} at {where}{inc}: {self.detail}"


@dataclass
class EnvironmentSpec:
    """Serializable description of an environment."""

    dimension: int
    increments: list[list[int]] | None
    alpha: Any
    kind: str
    params: dict = field(default_factory=dict)
    seed: int | None = None

    @classmethod
    def from_dict(cls, data: dict) -> EnvironmentSpec:
        try:
            return cls(
                dimension=int(data["dimension"]),
                increments=data.get("increments"),
                alpha=data["alpha"],
                kind=str(data["kind"]),
                params=dict(data.get("params") or {}),
                seed=data.get("seed"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"malformed environment spec: {exc}") from exc

    @classmethod
    def load(cls, path) -> EnvironmentSpec:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise SpecError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "increments": self.increments,
            "alpha": self.alpha,
            "kind": self.kind,
            "params": self.params,
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _parse_prob(v):
    """Fraction for exact inputs (ints, 'p/q' strings), float otherwise."""
    if isinstance(v, bool):
        raise SpecError("probabilities must be numbers")
    if isinstance(v, (int, Fraction)):
        return Fraction(v)
    if isinstance(v, str):
        try:
            return Fraction(v)
        except ValueError as exc:
            raise SpecError(f"bad probability {v!r}") from exc
    if isinstance(v, float):
        return v
    raise SpecError(f"bad probability {v!r}")


def _rows(values, k: int, count: int):
    rows = [list(map(_parse_prob, r)) for r in values]
    if len(rows) != count or any(len(r) != k for r in rows):
        raise SpecError(f"expected {count} rows of {k} probabilities")
    exact = all(isinstance(p, Fraction) for r in rows for p in r)
    table = np.array([[float(p) for p in r] for r in rows], dtype=float)
    return table, (np.array(rows, dtype=object) if exact else None)


@dataclass(frozen=True, eq=False)
class Environment:
    """Immutable transition rule pi(x, e).

    ``table`` has shape ``(*box_shape, |Gamma|)``; entry ``table[i]`` is the
    row of the site ``origin + i``.  Outside the table box the row is found
    by periodic reduction or, for ``constant-outside``, is ``outside``.
    """

    gamma: IncrementSet
    alpha: float
    table: np.ndarray
    origin: tuple[int, ...]
    extension: str = "periodic"
    outside: np.ndarray | None = None
    exact: np.ndarray | None = None
    exact_outside: np.ndarray | None = None
    spec: EnvironmentSpec | None = None

    def __post_init__(self):
        t = np.array(self.table, dtype=float, copy=True)
        if t.ndim != self.gamma.dimension + 1 or t.shape[-1] != self.gamma.size:
            raise SpecError("table shape does not match dimension and increment set")
        t.flags.writeable = False
        object.__setattr__(self, "table", t)
        object.__setattr__(self, "origin", tuple(int(v) for v in self.origin))
        if self.extension not in EXTENSIONS:
            raise SpecError(f"unknown extension {self.extension!r}")
        if self.extension == "constant-outside":
            if self.outside is None:
                raise SpecError("constant-outside extension needs an outside row")
            o = np.array(self.outside, dtype=float)
            o.flags.writeable = False
            object.__setattr__(self, "outside", o)
        if self.extension == "analytic" and any(s != 1 for s in t.shape[:-1]):
            raise SpecError("analytic rules are stored as a single row")

    # -- basic properties -------------------------------------------------

    @property
    def dimension(self) -> int:
        return self.gamma.dimension

    @property
    def increments(self) -> np.ndarray:
        return self.gamma.increments

    @property
    def table_box(self) -> Box:
        return Box(self.origin, tuple(np.add(self.origin, self.table.shape[:-1]) - 1))

    @property
    def n_classes(self) -> int:
        """Number of distinct site rows (table sites, plus one outside row)."""
        n = int(np.prod(self.table.shape[:-1]))
        return n + (1 if self.extension == "constant-outside" else 0)

    @property
    def is_translation_invariant(self) -> bool:
        if self.extension == "analytic":
            return True
        rows = self.class_rows()
        return bool(np.all(rows == rows[0]))

    def class_rows(self) -> np.ndarray:
        rows = self.table.reshape(-1, self.gamma.size)
        if self.extension == "constant-outside":
            rows = np.vstack([rows, self.outside[None]])
        return rows

    # -- lookups ----------------------------------------------------------

    def _axis_index(self, axis: int, coords: np.ndarray):
        rel = np.asarray(coords, dtype=np.int64) - self.origin[axis]
        n = self.table.shape[axis]
        if self.extension == "constant-outside":
            inside = (rel >= 0) & (rel < n)
            return np.clip(rel, 0, n - 1), inside
        return np.mod(rel, n), None

    def class_index(self, points) -> np.ndarray:
        """Row index into :meth:`class_rows` for each point, shape (N,)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        shape = self.table.shape[:-1]
        flat = np.zeros(len(pts), dtype=np.int64)
        inside = np.ones(len(pts), dtype=bool)
        for axis in range(self.dimension):
            idx, ins = self._axis_index(axis, pts[:, axis])
            flat = flat * shape[axis] + idx
            if ins is not None:
                inside &= ins
        if self.extension == "constant-outside":
            flat[~inside] = int(np.prod(shape))
        return flat

    def pi_points(self, points) -> np.ndarray:
        """pi(x, .) for each row of ``points``; shape (N, |Gamma|)."""
        return self.class_rows()[self.class_index(points)]

    def pi_at(self, x, e) -> float:
        j = self.gamma.index(e)
        return float(self.pi_points([x])[0, j])

    def pi_exact_at(self, x, e) -> Fraction:
        if self.exact is None:
            raise ValueError("environment has no exact rational table")
        j = self.gamma.index(e)
        rows = self.exact.reshape(-1, self.gamma.size)
        if self.extension == "constant-outside":
            rows = np.vstack([rows, self.exact_outside[None]])
        return rows[self.class_index([x])[0], j]

    def pi_field(self, box: Box) -> np.ndarray:
        """pi(x, e) over a box, shape (|Gamma|, *box.shape)."""
        idx, inside = [], None
        for axis, ax in enumerate(box.axes()):
            i, ins = self._axis_index(axis, ax)
            idx.append(i)
            if ins is not None:
                shape = [1] * box.dim
                shape[axis] = -1
                ins = ins.reshape(shape)
                inside = ins if inside is None else inside & ins
        out = self.table[np.ix_(*idx)]
        if inside is not None:
            out = np.where(inside[..., None], out, self.outside)
        return np.ascontiguousarray(np.moveaxis(out, -1, 0))

    def fingerprint(self) -> str:
        cached = self.__dict__.get("_fingerprint")
        if cached is None:
            cached = self.__dict__["_fingerprint"] = self._hash()
        return cached

    def _hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"inc": self.gamma.tolist(), "ext": self.extension, "origin": self.origin,
                             "alpha": float(self.alpha), "shape": list(self.table.shape)}).encode())
        h.update(np.ascontiguousarray(self.table).tobytes())
        if self.outside is not None:
            h.update(self.outside.tobytes())
        return h.hexdigest()

    def to_spec(self) -> EnvironmentSpec:
        """Fully tabulated spec reproducing this environment exactly."""
        if self.exact is not None:
            rows = [[str(p) for p in r] for r in self.exact.reshape(-1, self.gamma.size).tolist()]
            outside = None if self.exact_outside is None else [str(p) for p in self.exact_outside]
        else:
            rows = [[float(p) for p in r] for r in self.table.reshape(-1, self.gamma.size)]
            outside = None if self.outside is None else [float(p) for p in self.outside]
        params = {"origin": list(self.origin), "shape": list(self.table.shape[:-1]),
                  "rows": rows, "extension": self.extension}
        if outside is not None:
            params["outside"] = outside
        alpha = str(self.alpha) if isinstance(self.alpha, Fraction) else float(self.alpha)
        return EnvironmentSpec(self.dimension, self.gamma.tolist(), alpha, "tabulated", params, None)


# -- validation -------------------------------------------------------------


def validate(env: Environment) -> list[Violation]:
    """Check sum-to-one, symmetry in e and the ellipticity floor on every row.

    Rows are checked exactly when a rational table is attached, otherwise
    with tolerance 1e-12.
    """
    out: list[Violation] = []
    alpha = env.alpha
    if not alpha > 0:
        out.append(Violation(None, None, "alpha", f"ellipticity floor must be positive, got {alpha}"))
    neg = env.gamma.negation
    incs = [tuple(e) for e in env.gamma.tolist()]
    shape = env.table.shape[:-1]

    exact_rows = None
    if env.exact is not None:
        exact_rows = env.exact.reshape(-1, env.gamma.size)
        if env.extension == "constant-outside":
            exact_rows = np.vstack([exact_rows, env.exact_outside[None]])
    rows = env.class_rows()
    n_table = int(np.prod(shape))

    for c in range(len(rows)):
        site = None if c >= n_table else tuple(int(v) for v in np.add(env.origin, np.unravel_index(c, shape)))
        if exact_rows is not None:
            r = exact_rows[c]
            a = Fraction(alpha) if not isinstance(alpha, float) else Fraction(alpha)
            total = sum(r, Fraction(0))
            if total != 1:
                out.append(Violation(site, None, "sum", f"row sums to {total}"))
            for j, e in enumerate(incs):
                if r[j] != r[neg[j]]:
                    out.append(Violation(site, e, "symmetry", f"pi(x,e)={r[j]} != pi(x,-e)={r[neg[j]]}"))
                if r[j] < a:
                    out.append(Violation(site, e, "ellipticity", f"pi(x,e)={r[j]} < alpha={alpha}"))
            continue
        r = rows[c]
        total = float(np.sum(r))
        if abs(total - 1.0) > FLOAT_TOL:
            out.append(Violation(site, None, "sum", f"row sums to {total!r}"))
        for j, e in enumerate(incs):
            if abs(r[j] - r[neg[j]]) > FLOAT_TOL:
                out.append(Violation(site, e, "symmetry", f"pi(x,e)={float(r[j])!r} != pi(x,-e)={float(r[neg[j]])!r}"))
            if r[j] < float(alpha) - FLOAT_TOL:
                out.append(Violation(site, e, "ellipticity", f"pi(x,e)={float(r[j])!r} < alpha={alpha}"))
    return out


# -- construction -------------------------------------------------------------


def _increment_set(spec: EnvironmentSpec) -> IncrementSet:
    if spec.dimension < 1:
        raise SpecError("dimension must be positive")
    if spec.increments is None:
        return IncrementSet.nearest(spec.dimension)
    inc = np.asarray(spec.increments)
    if inc.ndim != 2 or inc.shape[1] != spec.dimension:
        raise SpecError("increments do not match dimension")
    return IncrementSet(inc)


def _per_dim(v, d: int, name: str) -> tuple[int, ...]:
    if isinstance(v, int):
        v = [v] * d
    v = [int(x) for x in v]
    if len(v) != d or any(x < 1 for x in v):
        raise SpecError(f"{name} must be {d} positive integers")
    return tuple(v)


def build(spec: EnvironmentSpec) -> Environment:
    """Materialize a spec without validating the resulting rule."""
    gamma = _increment_set(spec)
    k, d = gamma.size, gamma.dimension
    alpha = _parse_prob(spec.alpha)
    if not isinstance(alpha, (Fraction, float)) or alpha <= 0:
        raise SpecError("alpha must be a positive number")
    if alpha * k > 1:
        raise SpecError(f"infeasible: alpha*|Gamma| = {float(alpha * k):g} > 1")
    p = spec.params
    kind = spec.kind

    if kind == "constant":
        if "probs" in p:
            table, exact = _rows([p["probs"]], k, 1)
        elif "hold" in p:
            hold = _parse_prob(p["hold"])
            rest = (1 - hold) / (k - 1)
            row = [hold if tuple(e) == (0,) * d else rest for e in gamma.tolist()]
            table, exact = _rows([row], k, 1)
        else:
            table, exact = _rows([[Fraction(1, k)] * k], k, 1)
        shape = (1,) * d
        return Environment(gamma, alpha, table.reshape(shape + (k,)), (0,) * d, "analytic",
                           exact=None if exact is None else exact.reshape(shape + (k,)), spec=spec)

    if kind == "periodic":
        period = _per_dim(p.get("period"), d, "period")
        table, exact = _rows(p.get("table", []), k, int(np.prod(period)))
        return Environment(gamma, alpha, table.reshape(period + (k,)), (0,) * d, "periodic",
                           exact=None if exact is None else exact.reshape(period + (k,)), spec=spec)

    if kind == "tabulated":
        shape = _per_dim(p.get("shape"), d, "shape")
        origin = tuple(int(v) for v in p.get("origin", [0] * d))
        if len(origin) != d:
            raise SpecError("origin does not match dimension")
        ext = p.get("extension", "periodic")
        table, exact = _rows(p.get("rows", []), k, int(np.prod(shape)))
        outside = exact_out = None
        if ext == "constant-outside":
            outside, exact_out = _rows([p.get("outside", [Fraction(1, k)] * k)], k, 1)
            outside = outside[0]
            exact_out = None if exact_out is None else exact_out[0]
            if exact is None:
                exact_out = None
        if exact is not None and ext == "constant-outside" and exact_out is None:
            exact = None
        return Environment(gamma, alpha, table.reshape(shape + (k,)), origin, ext, outside=outside,
                           exact=None if exact is None else exact.reshape(shape + (k,)),
                           exact_outside=exact_out, spec=spec)

    if kind == "random":
        if spec.seed is None:
            raise SpecError("random environments need a seed")
        shape = _per_dim(p.get("size", 64), d, "size")
        ext = p.get("extension", "periodic")
        table = random_elliptic_table(gamma, float(alpha), shape, int(spec.seed))
        outside = None
        if ext == "constant-outside":
            outside = np.asarray(_rows([p.get("outside", [1.0 / k] * k)], k, 1)[0][0])
        elif ext != "periodic":
            raise SpecError(f"random environments extend periodically or constant-outside, not {ext!r}")
        origin = tuple(int(v) for v in p.get("origin", [-(s // 2) for s in shape]))
        return Environment(gamma, float(alpha), table, origin, ext, outside=outside, spec=spec)

    raise SpecError(f"unknown kind {kind!r}; expected one of {KINDS}")


def random_elliptic_table(gamma: IncrementSet, alpha: float, shape, seed: int) -> np.ndarray:
    """Seeded symmetric table with minimum entry exactly ``alpha``.

    Each site draws one positive weight per pair {e, -e}, splits it evenly
    between e and -e, normalizes, then mixes with the uniform law on Gamma
    at the smallest rate that lifts the minimum entry to ``alpha``.
    """
    k = gamma.size
    rng = np.random.default_rng(seed)
    pairs = gamma.pairs()
    w = 1.0 - rng.random(tuple(shape) + (len(pairs),))
    raw = np.empty(tuple(shape) + (k,))
    for p_idx, members in enumerate(pairs):
        for j in members:
            raw[..., j] = w[..., p_idx] / len(members)
    raw /= raw.sum(axis=-1, keepdims=True)
    low = raw.min()
    u = 1.0 / k
    if alpha * k >= 1.0:
        lam = 1.0
    elif low >= alpha:
        lam = 0.0
    else:
        lam = (alpha - low) / (u - low)
    table = (1.0 - lam) * raw + lam * u
    # keep pi(x, e) == pi(x, -e) bitwise after the affine map
    neg = gamma.negation
    table = 0.5 * (table + table[..., neg])
    return table


def generate(spec: EnvironmentSpec) -> Environment:
    """Build an environment and require it to pass :func:`validate`."""
    env = build(spec)
    bad = validate(env)
    if bad:
        raise InvalidEnvironment(bad)
    return env


def load_environment(path, check: bool = True) -> Environment:
    spec = EnvironmentSpec.load(path)
    return generate(spec) if check else build(spec)


# -- common environments ----------------------------------------------------


def lazy_walk(d: int = 1, hold="1/2", exact: bool = True) -> Environment:
    """Translation-invariant walk holding with probability ``hold``."""
    hold = str(hold) if exact else float(Fraction(hold))
    k = 2 * d + 1
    alpha = str(min(Fraction(hold), (1 - Fraction(hold)) / (k - 1))) if exact else min(
        float(hold), (1 - float(hold)) / (k - 1))
    return generate(EnvironmentSpec(d, None, alpha, "constant", {"hold": hold}))


def random_environment(d: int, alpha: float, seed: int, size=64, extension="periodic") -> Environment:
    return generate(EnvironmentSpec(d, None, alpha, "random", {"size": size, "extension": extension}, seed))


def periodic_environment(period, rows, alpha, increments=None) -> Environment:
    period = list(period)
    return generate(EnvironmentSpec(len(period), increments, alpha, "periodic",
                                    {"period": period, "table": rows}))
