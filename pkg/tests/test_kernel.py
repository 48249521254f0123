from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heatlab.environment import lazy_walk, random_environment
from heatlab.kernel import (
    DomainError,
    KilledWalk,
    MassField,
    ResourceLimitError,
    apply_L,
    apply_L_star,
    budget,
    kernel_row,
    kernel_rows,
    killed_kernel,
    step,
)
from heatlab.lattice import Ball, Box, Domain

from oracles import ball_points, killed_powers, lazy_kernel


def test_two_steps_of_lazy_walk(lazy1):
    mu = kernel_row(lazy1, (0,), 2)
    assert mu.box == Box((-2,), (2,))
    assert np.allclose(mu.values, [1 / 16, 1 / 4, 3 / 8, 1 / 4, 1 / 16])


@pytest.mark.parametrize("n", [0, 1, 5, 17, 40])
def test_whole_row_matches_exact_law(lazy1, n):
    exact = lazy_kernel(n, Fraction(1, 2))
    mu = kernel_row(lazy1, (3,), n, trim_tol=0)
    for x, p in exact.items():
        assert mu.at((3 + x,)) == pytest.approx(float(p), abs=1e-15)


def test_kernel_rows_yields_requested_times(rand2):
    got = {n: mu.time for n, mu in kernel_rows(rand2, (0, 0), [5, 1, 3])}
    assert got == {1: 1, 3: 3, 5: 5}


def test_symmetry_of_translation_invariant_kernel():
    env = lazy_walk(2, exact=False)
    mu = kernel_row(env, (0, 0), 12, trim_tol=0)
    assert np.allclose(mu.values, mu.values[::-1, ::-1], atol=1e-16)
    assert np.allclose(mu.values, mu.values.T, atol=1e-16)


def test_reversibility_against_adjoint_weights(rand1):
    """p_n(x, y) differs from p_n(y, x) in general, but both rows are distributions."""
    a = kernel_row(rand1, (0,), 9, trim_tol=0)
    b = kernel_row(rand1, (4,), 9, trim_tol=0)
    assert abs(a.total() - 1) < 1e-14 and abs(b.total() - 1) < 1e-14


def test_support_stays_within_reach(rand2):
    mu = kernel_row(rand2, (1, -2), 7, trim_tol=0)
    pts, vals = mu.items()
    assert np.all(np.abs(pts - [1, -2]).sum(axis=1) <= 7)
    assert np.all(vals > 0)


def test_trimming_accounts_for_mass(rand2):
    mu = kernel_row(rand2, (0, 0), 200, trim_tol=1e-20)
    assert mu.dropped >= 0
    assert abs(mu.total() + mu.dropped - 1) < 1e-12
    assert mu.box.size < Box.around((0, 0), 200).size


def test_budget_is_enforced(lazy1):
    with budget(1000):
        with pytest.raises(ResourceLimitError):
            kernel_row(lazy1, (0,), 10_000, trim_tol=0)


def test_L_star_kills_constants_for_translation_invariant(lazy1):
    box = Box((-5,), (5,))
    res, inner = apply_L_star(lazy1, np.ones(box.shape), box)
    assert np.abs(res).max() < 1e-15
    res, _ = apply_L(lazy1, np.arange(11.0), box)
    assert np.abs(res).max() < 1e-14  # linear functions are harmonic


@pytest.mark.parametrize("radius,t", [(4, 20), (7.5, 35)])
def test_killed_kernel_small_oracle(rand1, radius, t):
    ball = Ball((0,), radius)
    pts = ball_points((0,), radius)
    ref = killed_powers(rand1, pts, (1,), t)
    mu = killed_kernel(rand1, ball, (1,), t)
    got = np.array([mu.at(p) for p in pts])
    assert np.abs(got - ref[t]).max() < 1e-14
    assert mu.total() + mu.escaped == pytest.approx(1.0, abs=1e-13)


def test_killed_walk_rejects_outside_start(lazy1):
    walk = KilledWalk(lazy1, Domain.from_ball(Ball((0,), 3), 1))
    with pytest.raises(DomainError):
        walk.delta((5,))


def test_forward_backward_duality(rand2):
    walk = KilledWalk(rand2, Domain.from_ball(Ball((0, 0), 4), 1))
    rng = np.random.default_rng(0)
    mu = np.where(walk.mask, rng.random(walk.box.shape), 0.0)
    u = rng.random(walk.box.shape)
    alive, exited = walk.forward(mu)
    lhs = float(((alive + exited) * u).sum())
    rhs = float((mu * walk.backward(u)).sum())
    assert lhs == pytest.approx(rhs, rel=1e-13)


@given(st.integers(1, 2), st.integers(0, 10**6), st.integers(0, 25),
       st.tuples(st.integers(-20, 20), st.integers(-20, 20)))
def test_mass_is_conserved(d, seed, n, x):
    env = random_environment(d, 0.05, seed, size=5)
    mu = kernel_row(env, x[:d], n, trim_tol=0)
    assert abs(mu.total() - 1.0) <= 1e-13
    assert mu.values.min() >= 0


@given(st.integers(0, 10**6), st.integers(1, 15), st.floats(2.0, 6.0))
def test_killed_mass_never_grows(seed, t, radius):
    env = random_environment(2, 0.05, seed, size=4)
    walk = KilledWalk(env, Domain.from_ball(Ball((0, 0), radius), 1))
    mu = walk.delta((0, 0))
    prev = 1.0
    for _, mu, exited in walk.evolve(mu, t):
        assert mu.sum() <= prev + 1e-15
        assert mu.sum() + exited.sum() == pytest.approx(prev, abs=1e-14)
        prev = mu.sum()


def test_step_of_delta_is_row(rand2):
    mu = step(rand2, MassField.delta((2, 3)))
    row = rand2.pi_points(np.array([[2, 3]]))[0]
    for j, e in enumerate(rand2.increments):
        assert mu.at(tuple(np.add((2, 3), e))) == pytest.approx(row[j])
