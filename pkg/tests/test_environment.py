import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatlab.environment import (
    EnvironmentSpec,
    IncrementSet,
    InvalidEnvironment,
    SpecError,
    build,
    generate,
    lazy_walk,
    periodic_environment,
    random_environment,
    validate,
)
from heatlab.lattice import Ball, Box, Domain, nearest_lattice_point, strict_range

from oracles import lattice_ball_count


def test_nearest_increments():
    g = IncrementSet.nearest(2)
    assert g.size == 5
    assert g.diam == pytest.approx(1.0)
    assert sorted(map(tuple, g.tolist())) == [(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]


@pytest.mark.parametrize("d,r,count", [(1, 3, 5), (1, 3.5, 7), (2, 1, 1), (2, 2, 9), (2, 3, 25), (3, 2, 27)])
def test_open_ball_counts(d, r, count):
    assert Ball((0,) * d, r).count() == count == lattice_ball_count(d, r)


def test_box_helpers():
    b = Box((-1, 0), (1, 2))
    assert b.shape == (3, 3) and b.size == 9
    assert b.contains((1, 2)) and not b.contains((2, 2))
    assert b.grow(1).contains_box(b)
    assert b.intersect(Box((5, 5), (6, 6))).is_empty
    assert b.index((0, 1)) == (1, 1)


def test_strict_range():
    assert list(strict_range(1, 4)) == [2, 3]
    assert list(strict_range(1.5, 3.5)) == [2, 3]


def test_domain_boundary_of_ball():
    dom = Domain.from_ball(Ball((0,), 3), 1)
    bnd = dom.boundary(IncrementSet.nearest(1).increments)
    assert sorted(np.argwhere(bnd).ravel() + dom.box.lo[0]) == [-3, 3]


def test_nearest_point_tiebreak_is_lexicographic():
    assert nearest_lattice_point((0.5, 0.5)) == (0, 0)


def test_lazy_walk_rows():
    env = lazy_walk(1)
    assert env.pi_at((7,), (0,)) == pytest.approx(0.5)
    assert env.pi_at((-3,), (1,)) == pytest.approx(0.25)
    assert env.is_translation_invariant
    assert validate(env) == []


def test_random_environment_floor_and_symmetry():
    env = random_environment(2, 0.05, 1)
    t = env.table
    assert t.min() == pytest.approx(0.05)
    assert np.allclose(t.sum(axis=-1), 1.0, atol=1e-12)
    neg = env.gamma.negation
    assert np.array_equal(t, t[..., neg])
    assert validate(env) == []


def test_random_environment_is_seeded():
    a = random_environment(2, 0.05, 4, size=8)
    b = random_environment(2, 0.05, 4, size=8)
    c = random_environment(2, 0.05, 5, size=8)
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_periodic_lookup_wraps():
    env = periodic_environment([2], [["1/2", "1/4", "1/4"], ["1/3", "1/3", "1/3"]], "1/4")
    assert env.pi_at((3,), (1,)) == pytest.approx(1 / 3)
    assert env.pi_at((-2,), (1,)) == pytest.approx(1 / 4)


def test_asymmetric_rows_are_reported():
    spec = EnvironmentSpec(1, None, "1/5", "periodic", {"period": [1], "table": [["1/2", "3/10", "1/5"]]})
    env = build(spec)
    bad = validate(env)
    assert {v.condition for v in bad} == {"symmetry"}
    with pytest.raises(InvalidEnvironment):
        generate(spec)


def test_ellipticity_violation():
    spec = EnvironmentSpec(1, None, "1/4", "constant", {"probs": ["0.8", "0.1", "0.1"]})
    bad = validate(build(spec))
    assert any(v.condition == "ellipticity" for v in bad)


@pytest.mark.parametrize("data", [
    {"dimension": 1, "alpha": 0.5, "kind": "constant"},
    {"dimension": 1, "alpha": 0.1, "kind": "nonsense"},
    {"dimension": 1, "alpha": 0.1, "kind": "random", "params": {}},
    {"dimension": 0, "alpha": 0.1, "kind": "constant"},
])
def test_bad_specs_raise(data):
    with pytest.raises(SpecError):
        build(EnvironmentSpec.from_dict(data))


def test_missing_fields_raise():
    with pytest.raises(SpecError):
        EnvironmentSpec.from_dict({"dimension": 1})


def test_to_spec_round_trip():
    env = random_environment(2, 0.05, 2, size=6)
    again = generate(EnvironmentSpec.from_dict(json.loads(env.to_spec().dumps())))
    pts = Box.around((0, 0), 9).points()
    assert np.array_equal(env.pi_points(pts), again.pi_points(pts))


@given(st.integers(1, 3), st.floats(0.01, 0.99 / 7), st.integers(0, 2**31 - 1))
def test_generated_random_environments_validate(d, alpha, seed):
    alpha = min(alpha, 0.99 / (2 * d + 1))
    env = random_environment(d, alpha, seed, size=3)
    assert validate(env) == []
    assert env.table.min() >= alpha - 1e-12
