import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_epoch
from evbargain.bargain import bargain
from evbargain.equilibrium import (GamePoint, ProjectionBudgetExceeded, certify, game_gradient,
                                   incentive_cost, merit, project_birkhoff, project_capped_sum,
                                   project_joint, provider_cost, sum_boxes_inactive)
from evbargain.model import CostMatrices, EpochProblem

FACILITIES = (3, 5, 8, 9)


def one_pair(c=3.0, w=1.0, box=(-5.0, 5.0)):
    return EpochProblem(
        costs=CostMatrices(C=np.array([[c]]), D=np.zeros((1, 0)), A=np.array([[c]]),
                           W=np.array([[w]])),
        charge_facility=np.zeros(0, dtype=np.int64),
        loss_target={s: 0.0 for s in FACILITIES}, ride_bounds=box, charge_bounds=(0.0, 2.4),
        sum_bounds={s: (-1e3, 1e3) for s in FACILITIES})


def random_point(gp, rng):
    """Random z with a doubly stochastic X block and arbitrary Y."""
    h = gp.h
    X = np.zeros((h, h))
    for wgt in rng.dirichlet(np.ones(3)):
        X[np.arange(h), rng.permutation(h)] += wgt
    Y = rng.uniform(-3, 3, size=(h, h))
    return gp.stack(X, Y)


# --------------------------------------------------------------------------
# Gradient
# --------------------------------------------------------------------------

def test_gradient_zero_when_incentive_equals_cost():
    prob = random_epoch(np.random.default_rng(0), q=0)
    gp = GamePoint.from_problem(prob)
    Y = np.zeros((gp.h, gp.h))
    Y[gp.ride_mask] = gp.base[gp.ride_mask]
    Fx, _ = gp.split(game_gradient(gp.stack(np.eye(gp.h), Y), gp))
    assert np.all(Fx[gp.ride_mask] == 0)


def test_gradient_zero_at_fixed_incentive():
    prob = random_epoch(np.random.default_rng(1))
    gp = GamePoint.from_problem(prob)
    Y = np.where(gp.ride_mask, gp.W, 0.0)
    _, Fy = gp.split(game_gradient(gp.stack(np.eye(gp.h), Y), gp))
    assert np.all(Fy[gp.ride_mask] == 0)


def central_difference(fun, x, step=1e-5):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


def test_gradient_matches_finite_differences():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        prob = random_epoch(rng, m=4, p=2, q=3)
        gp = GamePoint.from_problem(prob)
        z = random_point(gp, rng)
        X, Y = gp.split(z)
        Fx, Fy = gp.split(game_gradient(z, gp))
        gx = central_difference(lambda v: provider_cost(gp, v.reshape(X.shape), Y), X.ravel())
        gy = central_difference(lambda v: incentive_cost(gp, X, v.reshape(Y.shape)), Y.ravel())
        assert np.linalg.norm(gx - Fx.ravel()) <= 1e-6 * np.linalg.norm(Fx)
        assert np.linalg.norm(gy - Fy.ravel()) <= 1e-6 * max(np.linalg.norm(Fy), 1.0)


def test_game_point_shape_checked():
    gp = GamePoint.from_problem(one_pair())
    with pytest.raises(ValueError):
        gp.split(np.zeros(3))


# --------------------------------------------------------------------------
# Projections
# --------------------------------------------------------------------------

def test_birkhoff_barycenter():
    assert np.allclose(project_birkhoff(np.zeros((2, 2))), 0.5, atol=1e-8)


def test_capped_sum_example():
    y = project_capped_sum(np.array([9.0, 9.0]), 0.0, 10.0, 0.0, 8.0)
    assert y == pytest.approx([4.0, 4.0], abs=1e-12)
    g = np.arange(0.0, 10.0 + 1e-9, 0.01)
    Y1, Y2 = np.meshgrid(g, g)
    d = np.where(Y1 + Y2 <= 8.0 + 1e-9, (Y1 - 9) ** 2 + (Y2 - 9) ** 2, np.inf)
    k = np.unravel_index(np.argmin(d), d.shape)
    assert (Y1[k], Y2[k]) == pytest.approx((4.0, 4.0), abs=1e-9)


def test_capped_sum_lower_bound_and_errors():
    y = project_capped_sum(np.array([-1.0, 0.5, 3.0]), 0.0, 2.0, 4.0, 10.0)
    assert y.sum() == pytest.approx(4.0)
    assert np.all((y >= 0) & (y <= 2))
    with pytest.raises(ValueError):
        project_capped_sum(np.array([1.0]), 0.0, 1.0, 2.0, 3.0)
    assert project_capped_sum(np.zeros(0), 0, 1, 0, 1).size == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=6), st.floats(-3, 3), st.floats(0.1, 4),
       st.floats(0, 1), st.floats(0, 1))
def test_capped_sum_variational_inequality(v, lo, width, a, b):
    v = np.asarray(v)
    n = v.size
    hi = lo + width
    s_lo = n * lo + a * n * width
    s_hi = s_lo + b * (n * hi - s_lo)
    y = project_capped_sum(v, lo, hi, s_lo, s_hi)
    assert np.all((y >= lo - 1e-12) & (y <= hi + 1e-12))
    assert s_lo - 1e-9 <= y.sum() <= s_hi + 1e-9
    # <v - y, q - y> <= 0 for random feasible q
    rng = np.random.default_rng(0)
    for q in rng.uniform(lo, hi, size=(200, n)):
        if s_lo <= q.sum() <= s_hi:
            assert np.dot(v - y, q - y) <= 1e-7 * (1 + np.abs(v).max())


@pytest.mark.parametrize("h", [2, 3, 4, 5])
def test_birkhoff_optimal_against_all_vertices(h):
    rng = np.random.default_rng(h)
    perms = list(itertools.permutations(range(h)))
    for _ in range(20):
        V = rng.normal(scale=2.0, size=(h, h))
        P = project_birkhoff(V)
        assert np.allclose(P.sum(axis=0), 1, atol=1e-8) and np.allclose(P.sum(axis=1), 1, atol=1e-8)
        assert P.min() >= 0
        for pm in perms:
            Q = np.zeros((h, h))
            Q[np.arange(h), pm] = 1
            assert np.sum((V - P) * (Q - P)) <= 1e-6


def test_birkhoff_handles_sentinel_scale():
    V = np.full((4, 4), -1e6)
    V[np.arange(4), [2, 0, 3, 1]] = 1.0
    P = project_birkhoff(V)
    assert np.allclose(P, np.eye(4)[[2, 0, 3, 1]], atol=1e-12)


def test_birkhoff_budget():
    V = np.random.default_rng(0).normal(size=(6, 6))
    with pytest.raises(ProjectionBudgetExceeded) as exc:
        project_birkhoff(V, tol=1e-14, max_sweeps=2)
    assert exc.value.sweeps == 2


def feasible_point(gp, res):
    return gp.stack(res.X, gp.pad_incentives(res.Y))


def test_projection_idempotent_on_feasible_point():
    prob = random_epoch(np.random.default_rng(2))
    gp = GamePoint.from_problem(prob)
    z = feasible_point(gp, bargain(prob))
    assert np.allclose(project_joint(z, gp), z, atol=1e-8)


def test_projection_idempotent_and_nonexpansive():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        prob = random_epoch(rng, m=5, p=3, q=2, inactive=False)
        gp = GamePoint.from_problem(prob)
        X_ref = bargain(prob).X
        a = rng.normal(scale=2.0, size=gp.size)
        b = rng.normal(scale=2.0, size=gp.size)
        Pa = project_joint(a, gp, X_ref=X_ref)
        Pb = project_joint(b, gp, X_ref=X_ref)
        assert np.allclose(project_joint(Pa, gp, X_ref=X_ref), Pa, atol=1e-7)
        assert np.linalg.norm(Pa - Pb) <= np.linalg.norm(a - b) + 1e-7


# --------------------------------------------------------------------------
# Merit
# --------------------------------------------------------------------------

def test_merit_hand_computed():
    prob = one_pair(c=3.0, w=1.0)
    gp = GamePoint.from_problem(prob)
    z = gp.stack(np.ones((1, 1)), np.full((1, 1), 4.0))
    # F = (-1, 6); h(z) = (1, -2); d = (0, -6): u = 36 + 18
    assert merit(z, gp) == pytest.approx(54.0, abs=1e-10)


def test_merit_positive_away_from_equilibrium():
    prob = random_epoch(np.random.default_rng(3))
    gp = GamePoint.from_problem(prob)
    res = bargain(prob)
    Y = res.Y.copy()
    Y[:, :prob.p] = np.where(prob.costs.ride_feasible, -5.0, 0.0)
    assert certify(prob, res.X, Y) > 1e-3


def test_merit_at_fixed_points():
    for seed in range(200):
        prob = random_epoch(np.random.default_rng(seed))
        res = bargain(prob)
        if res.trace.converged:
            assert sum_boxes_inactive(prob, res.X, res.Y)
            assert certify(prob, res.X, res.Y) <= 1e-6


def test_merit_nonnegative_on_feasible_points():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        prob = random_epoch(rng, m=5, p=3, q=2)
        gp = GamePoint.from_problem(prob)
        z = project_joint(random_point(gp, rng), gp)
        assert merit(z, gp) >= 0.0


def test_merit_with_active_sum_boxes_runs():
    prob = random_epoch(np.random.default_rng(4), inactive=False)
    res = bargain(prob)
    assert certify(prob, res.X, res.Y) >= 0.0


def test_empty_epoch_certifies():
    prob = EpochProblem(costs=CostMatrices(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)),
                                           np.zeros((0, 0))),
                        charge_facility=np.zeros(0, dtype=np.int64), loss_target={},
                        ride_bounds=(-5, 5), charge_bounds=(0, 1), sum_bounds={})
    assert certify(prob, np.zeros((0, 0)), np.zeros((0, 0))) == 0.0
