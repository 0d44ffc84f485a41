import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from acrl.constraints import Ball, Box, LinearSystem, PositivePartSum, SignedSumBand, WeightedAbsSum, is_feasible
from acrl.envs.nsfnet import ROUTING
from acrl.mdp import EnvState
from acrl.projection import QP_COUNTER, NoConvergence, project, project_ball, project_box, project_dykstra

from oracles import brute_force_nearest

S0 = EnvState(np.zeros(1), 0, False)


class TestClosedForms:
    def test_ball_scaling(self):
        np.testing.assert_allclose(project_ball([3.0, 4.0], 1.0), [0.6, 0.8])
        np.testing.assert_array_equal(project_ball([0.1, 0.1], 1.0), [0.1, 0.1])

    def test_box_clip(self):
        np.testing.assert_array_equal(project_box([-1.0, 0.5, 3.0], 0.0, 1.0), [0.0, 0.5, 1.0])

    def test_band_box_symmetric(self):
        rep = project(SignedSumBand(90, 5, 40, dim=3), [50.0, 50.0, 50.0], box=Box(np.zeros(3), np.full(3, 40.0)))
        np.testing.assert_allclose(rep.projected, [95 / 3] * 3)

    def test_feasible_input_untouched(self):
        rep = project(Ball(0.05), [0.1, 0.1])
        assert not rep.moved and rep.iterations == 0
        np.testing.assert_array_equal(rep.projected, [0.1, 0.1])

    def test_positive_part_kkt_example(self):
        spec = PositivePartSum([1.0, -2.0, 0.5], 10.0)
        rep = project(spec, [20.0, -5.0, 30.0], box=Box(np.full(3, -50.0), np.full(3, 50.0)))
        np.testing.assert_allclose(rep.projected, [0.0, 0.0, 20.0], atol=1e-6)

    def test_weighted_l1_is_feasible_and_closer(self, rng):
        spec = WeightedAbsSum([1.0, 2.0, 0.5], 1.0)
        for _ in range(100):
            a = rng.normal(0, 3, 3)
            x = project(spec, a).projected
            assert is_feasible(spec, S0, x)

    def test_unbounded_band_below(self):
        # no action box: the band alone, approached from far below the slab
        spec = SignedSumBand(90, 5, 40, dim=3)
        x = project(spec, [-100.0, 0.0, 0.0]).projected
        assert is_feasible(spec, S0, x)
        assert x.sum() == pytest.approx(85.0)


class TestCounter:
    def test_each_call_counts_once(self):
        QP_COUNTER.reset()
        project_ball([3.0, 4.0], 1.0)
        project_box([3.0], 0.0, 1.0)
        project(Ball(1.0), [3.0, 4.0])
        project_dykstra([2.0, 2.0], [Ball(1.0), Box([0, 0], [1, 1])])
        project(PositivePartSum([1.0, 1.0], 1.0), [3.0, 3.0], box=Box(np.full(2, -5.0), np.full(2, 5.0)))
        assert QP_COUNTER.count == 5

    def test_dykstra_non_convergence_reported(self):
        # the disc and the corner box do not meet
        with pytest.raises(NoConvergence):
            project_dykstra([5.0, 5.0], [Ball(1.0), Box([0.9, 0.9], [2.0, 2.0])], max_iter=200)


def _check(spec, a, lo, hi, rng, state=S0):
    rep = project(spec, a, state=state, box=Box(lo, hi))
    x = rep.projected
    assert is_feasible(spec, state, x) and np.all(x >= lo) and np.all(x <= hi)

    def member(X):
        return spec.contains_rows(X, state)

    best, best_d = brute_force_nearest(a, member, lo, hi, rng)
    d = np.linalg.norm(x - a)
    assert d <= best_d + 1e-9, (d, best_d)
    assert np.linalg.norm(x - best) <= 1e-3 or best_d - d < 1e-3
    return x


FORMS = {
    "ball2": (Ball(0.05), np.full(2, -1.0), np.full(2, 1.0)),
    "ball5": (Ball(2.0), np.full(5, -2.0), np.full(5, 2.0)),
    "wabs3": (WeightedAbsSum([1.0, 2.0, 0.5], 1.0), np.full(3, -3.0), np.full(3, 3.0)),
    "ppos3": (PositivePartSum([1.0, -2.0, 0.5], 1.0), np.full(3, -2.0), np.full(3, 2.0)),
    "ppos5": (PositivePartSum([1.0, 1.5, -0.5, 2.0, 0.7], 2.0), np.full(5, -2.0), np.full(5, 2.0)),
    "band3": (SignedSumBand(90, 5, 40, dim=3), np.zeros(3), np.full(3, 40.0)),
    "band5": (SignedSumBand(150, 5, 40, dim=5), np.zeros(5), np.full(5, 40.0)),
    "linear5": (LinearSystem(ROUTING[:, :5][[0, 2, 4, 7]], np.full(4, 50.0)), np.zeros(5), np.full(5, 50.0)),
}


@pytest.mark.parametrize("name", sorted(FORMS))
def test_projection_matches_bruteforce(name, rng):
    spec, lo, hi = FORMS[name]
    for _ in range(3):
        a = rng.uniform(lo - 0.5 * (hi - lo), hi + 0.5 * (hi - lo))
        _check(spec, a, lo, hi, rng)


@given(arrays(np.float64, 3, elements=st.floats(-20, 60)))
def test_band_projection_feasible_and_idempotent(a):
    spec = SignedSumBand(90, 5, 40, dim=3)
    box = Box(np.zeros(3), np.full(3, 40.0))
    x = project(spec, a, box=box).projected
    assert is_feasible(spec, S0, x)
    again = project(spec, x, box=box)
    assert not again.moved


@given(arrays(np.float64, 9, elements=st.floats(-10, 80)))
def test_linear_projection_never_farther_than_a_feasible_point(a):
    spec = LinearSystem(ROUTING, np.full(8, 50.0))
    box = Box(np.zeros(9), np.full(9, 50.0))
    x = project(spec, a, box=box).projected
    assert is_feasible(spec, S0, x) and box.contains_rows(x)[0]
    # the origin is feasible, so the projection is at least as close
    assert np.linalg.norm(x - a) <= np.linalg.norm(a) + 1e-9


@given(arrays(np.float64, 4, elements=st.floats(-5, 5)), st.floats(0.1, 3.0))
def test_ball_projection_is_radial(a, r2):
    x = project_ball(a, r2)
    n = np.linalg.norm(a)
    if n ** 2 <= r2:
        np.testing.assert_array_equal(x, a)
    else:
        assert np.linalg.norm(x) == pytest.approx(np.sqrt(r2))
        np.testing.assert_allclose(x * n, a * np.linalg.norm(x), atol=1e-9)


class TestDykstra:
    def test_feasible_input_is_fixed_point(self):
        rep = project_dykstra([0.2, 0.3], [Ball(1.0), Box([0, 0], [1, 1])])
        assert not rep.moved and rep.iterations == 1
        np.testing.assert_array_equal(rep.projected, [0.2, 0.3])

    def test_single_halfspace_closed_form(self, rng):
        for _ in range(20):
            w = rng.normal(size=4)
            b = float(rng.normal())
            a = rng.normal(0, 3, 4)
            x = project_dykstra(a, [LinearSystem(w[None, :], [b])]).projected
            expect = a - max(0.0, w @ a - b) / (w @ w) * w
            np.testing.assert_allclose(x, expect, atol=1e-10)

    def test_band_against_feasible_sample(self, rng):
        a = np.array([50.0, 50.0, 50.0])
        spec = SignedSumBand(90, 5, 40, dim=3)
        box = Box(np.zeros(3), np.full(3, 40.0))
        x = project_dykstra(a, [spec, box]).projected
        assert is_feasible(spec, S0, x) and box.contains_rows(x)[0]
        X = rng.uniform(0, 40, (1_600_000, 3))
        X = X[spec.contains_rows(X, S0)][:100_000]
        assert X.shape[0] == 100_000
        assert np.linalg.norm(x - a) <= np.linalg.norm(X - a, axis=1).min() + 1e-6


    def test_degenerate_routing_face(self):
        # Dykstra stalls here and the active set is degenerate; the exact
        # least-distance fallback must still return the true projection
        a = np.array([0.0, 0.0, 0.0, 69.0, 1.0, 0.0, 0.0, 50.0, 0.0])
        spec = LinearSystem(ROUTING, np.full(8, 50.0))
        x = project(spec, a, box=Box(np.zeros(9), np.full(9, 50.0))).projected
        np.testing.assert_allclose(x, [0, 0, 0, 50, 0.5, 0, 0, 49.5, 0], atol=1e-8)


class TestProperties:
    def test_ball_8d_oracle(self, rng):
        for _ in range(3):
            a = rng.normal(0, 1.5, 8)
            x = project_ball(a, 2.0)
            lim = np.full(8, -np.sqrt(2.0)), np.full(8, np.sqrt(2.0))
            best, best_d = brute_force_nearest(a, lambda X: (X**2).sum(axis=1) <= 2.0, *lim, rng, n0=1_000_000, rounds=80)
            d = np.linalg.norm(x - a)
            assert d <= best_d + 1e-12 and best_d - d < 1e-3

    def test_box_grid_oracle(self, rng):
        g = np.linspace(-1, 1, 401)
        G = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
        for _ in range(10):
            a = rng.uniform(-3, 3, 2)
            x = project_box(a, -1.0, 1.0)
            d = np.linalg.norm(G - a, axis=1)
            best = G[np.argmin(d)]
            # never farther than the best grid point, and within one cell of it
            assert np.linalg.norm(x - a) <= d.min() + 1e-12
            assert np.linalg.norm(x - best) <= 0.005 * np.sqrt(2)

    def test_idempotence(self, rng):
        for _ in range(50):
            a = rng.normal(0, 3, 3)
            p = project_ball(a, 0.7)
            np.testing.assert_allclose(project_ball(p, 0.7), p, atol=1e-9)
            q = project_box(a, -1.0, 0.5)
            np.testing.assert_allclose(project_box(q, -1.0, 0.5), q, atol=1e-9)
            sets = [Ball(4.0), Box(np.zeros(3), np.full(3, 5.0))]
            r = project_dykstra(a, sets).projected
            np.testing.assert_allclose(project_dykstra(r, sets).projected, r, atol=1e-9)

    def test_non_expansive(self, rng):
        for _ in range(200):
            a, b = rng.normal(0, 3, (2, 4))
            assert np.linalg.norm(project_ball(a, 1.3) - project_ball(b, 1.3)) <= np.linalg.norm(a - b) + 1e-12
            assert np.linalg.norm(project_box(a, -1, 1) - project_box(b, -1, 1)) <= np.linalg.norm(a - b) + 1e-12

    def test_box_dimension_mismatch(self):
        from acrl.constraints import DimensionMismatch

        with pytest.raises(DimensionMismatch):
            project_box([1.0, 2.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
