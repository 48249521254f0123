import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatlab.adjoint import (
    WindowError,
    adjoint_residual,
    ball_sums,
    build_M,
    constant_adjoint,
    green_adjoint,
    level_solution,
    normalized_adjoint,
    volume,
)
from heatlab.environment import EnvironmentSpec, generate, lazy_walk, random_environment
from heatlab.kernel import apply_L_star
from heatlab.lattice import Ball, Box

from oracles import torus_stationary


def periodic_from_random(d, P, seed, alpha=0.05):
    r = random_environment(d, alpha, seed, size=P)
    table = r.table.reshape(-1, 2 * d + 1).tolist()
    return generate(EnvironmentSpec(d, None, alpha, "periodic", {"period": [P] * d, "table": table}))


def test_constant_adjoint(lazy1):
    M = constant_adjoint(lazy1, 5)
    assert M.at((3,)) == 1.0 and M.residual == 0.0
    with pytest.raises(ValueError):
        constant_adjoint(random_environment(1, 0.1, 0), 5)


def test_level_solution_is_normalized_and_positive(rand1):
    sol = level_solution(rand1, 4)
    assert sol.values[sol.box.index((0,))] == pytest.approx(1.0)
    ball = sol.ball
    assert np.all(sol.values[ball.mask(sol.box)] > 0)


def test_level_solution_is_adjoint_harmonic_inside(rand2):
    sol = level_solution(rand2, 3)
    res, inner = apply_L_star(rand2, sol.values, sol.box)
    mask = Ball((0, 0), 8 - 1).mask(inner)
    assert np.abs(res[mask]).max() < 1e-12


@pytest.mark.parametrize("P,seed", [(2, 12), (3, 13), (5, 4)])
def test_d1_periodic_matches_torus(P, seed):
    env = periodic_from_random(1, P, seed)
    M = build_M(env, window=6, tol=1e-10, l_max=12)
    ref = torus_stationary(env, P)
    want = np.array([ref[(int(x[0]) % P,)] for x in M.window.points()])
    assert np.abs(M.values - want).max() / want.max() < 1e-8
    assert M.residual < 1e-12


def test_translation_invariant_is_flat(lazy1_float):
    M = build_M(lazy1_float, window=8, tol=1e-10, l_max=12)
    assert np.abs(M.values - 1).max() < 1e-8


def test_unconverged_is_flagged(rand1):
    M = build_M(rand1, window=4, tol=0.0, l_max=4)
    assert not M.converged
    assert M.metadata()["level"] == M.level


def test_window_errors(rand1):
    M = build_M(rand1, window=4, l_max=6)
    with pytest.raises(WindowError):
        M.at((10,))
    with pytest.raises(WindowError):
        volume(M, (0,), 8)


def test_adjoint_residual_of_constant_for_lazy(lazy1):
    box = Box((-4,), (4,))
    assert adjoint_residual(lazy1, np.ones(box.shape), box) == 0.0


def test_green_adjoint_pole_and_harmonicity(rand2):
    loc = green_adjoint(rand2, (0, 0), 5, 6, 7)
    assert 25 <= sum(v * v for v in loc.pole) < 36
    res, inner = apply_L_star(rand2, loc.values, loc.box)
    mask = loc.valid.mask(inner)
    assert np.abs(res[mask]).max() < 1e-12 * loc.values.max()


def test_normalized_adjoint_mass(rand1):
    M = build_M(rand1, window=30, l_max=8, tol=1e-8)
    v = normalized_adjoint(rand1, M, (0,))
    assert v.mass(12) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(WindowError):
        v.mass(40)


@given(st.integers(1, 3), st.floats(0.5, 6.0), st.integers(0, 10**6))
def test_ball_sums_match_brute_force(d, r, seed):
    rng = np.random.default_rng(seed)
    k = int(np.ceil(r)) + 2
    box = Box.around((0,) * d, k)
    vals = rng.random(box.shape)
    centers = Box.around((0,) * d, 2)
    got = ball_sums(vals, box, r, centers)
    for c in centers.points():
        ball = Ball(tuple(c), r)
        want = vals[ball.mask(box)].sum()
        assert got[centers.index(tuple(c))] == pytest.approx(want, rel=1e-12)


@given(st.integers(0, 10**6))
def test_M_normalized_at_origin(seed):
    env = random_environment(1, 0.1, seed, size=5)
    M = build_M(env, window=3, tol=1e-6, l_max=7)
    assert M.at((0,)) == 1.0
    assert np.all(M.values > 0)
