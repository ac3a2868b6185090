import math

import numpy as np
import pytest

from armor.errors import DimensionError, NoFeasibleCandidateError
from armor.fdiv import Alpha, BetaMix, Indicator, KL
from armor.dro import (
    DroProblem,
    Variant,
    bruteforce_primal,
    ctransform_exact,
    outer_objective,
    solve_outer,
)
from armor.transport import BallCostSpec, build_ball_cost

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def single_sample(divergence=KL(), eps=0.1, kappa=0.0):
    return DroProblem([1.0, 0.0], [0.0, 1.0], SWAP, divergence, eps, kappa)


def ball_problem():
    pts = [0.0, 1.0, 2.0]
    cost = build_ball_cost(BallCostSpec(1.0), [0.0, 2.0], pts)
    return DroProblem([0.5, 0.5], [0.0, 1.0, 5.0], cost, Indicator(), 0.3, sample_index=[0, 2])


class TestCTransform:
    def test_two_point_enumeration(self):
        vals, arg = ctransform_exact([0.0, 1.0], SWAP, 0.5)
        assert vals.tolist() == [1.0, 2.0] and arg.tolist() == [1, 1]
        vals, _ = ctransform_exact([0.0, 1.0], SWAP, 2.0)
        assert vals == pytest.approx([0.0, 0.5])

    def test_constant_loss_stays_put(self):
        rng = np.random.default_rng(0)
        c = rng.random((4, 4)) + 0.1
        np.fill_diagonal(c, 0.0)
        vals, arg = ctransform_exact(np.full(4, 3.0), c, 1.5)
        assert vals == pytest.approx(np.full(4, 2.0)) and arg.tolist() == [0, 1, 2, 3]

    def test_lowest_index_on_ties(self):
        _, arg = ctransform_exact([1.0, 1.0, 0.0], np.zeros((1, 3)), 1.0)
        assert arg.tolist() == [0]

    def test_errors(self):
        with pytest.raises(ValueError):
            ctransform_exact([0.0, 1.0], SWAP, 0.0)
        with pytest.raises(NoFeasibleCandidateError, match="1"):
            ctransform_exact([0.0, 1.0], [[0.0, 1.0], [math.inf, math.inf]], 1.0)
        with pytest.raises(DimensionError):
            ctransform_exact([0.0, 1.0, 2.0], SWAP, 1.0)


class TestOuterObjective:
    @pytest.mark.parametrize("lam,expected", [(0.5, 0.55), (1.0, 0.1), (2.0, 0.2)])
    def test_hand_values(self, lam, expected):
        assert outer_objective(single_sample(), lam) == pytest.approx(expected, abs=1e-12)

    def test_dense_sweep_matches_formula(self):
        prob = single_sample()
        for lam in np.logspace(-2, 1, 40):
            assert outer_objective(prob, lam) == pytest.approx(0.1 * lam + max(0.0, 1 - lam), abs=1e-12)

    def test_constant_loss(self):
        c = np.array([[0.0, 2.0, 1.0], [2.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        prob = DroProblem([0.2, 0.3, 0.5], [4.0, 4.0, 4.0], c, KL(), 0.25)
        for lam in (0.01, 1.0, 30.0):
            assert outer_objective(prob, lam) == pytest.approx(0.25 * lam + 4.0, rel=1e-12)

    def test_tiny_beta_mixture_tracks_indicator(self):
        rng = np.random.default_rng(7)
        c = rng.random((3, 3))
        np.fill_diagonal(c, 0.0)
        base = dict(baseline=[0.3, 0.3, 0.4], loss=rng.random(3) * 2, cost=c, epsilon=0.1)
        ind = DroProblem(divergence=Indicator(), **base)
        mix = DroProblem(divergence=BetaMix(KL(), 1e-8), **base)
        for lam in (0.3, 1.0, 4.0):
            assert outer_objective(mix, lam) == pytest.approx(outer_objective(ind, lam), abs=1e-6)

    def test_rho_rejected_for_kl(self):
        with pytest.raises(ValueError):
            outer_objective(single_sample(), 1.0, rho=0.0)

    def test_explicit_rho_upper_bounds_profile(self):
        prob = single_sample(Alpha(2))
        best = outer_objective(prob, 1.3)
        for rho in np.linspace(-2, 2, 21):
            assert outer_objective(prob, 1.3, rho=float(rho)) >= best - 1e-10


class TestSolveOuter:
    def test_single_sample(self):
        sol = solve_outer(single_sample())
        assert sol.value == pytest.approx(0.1, abs=1e-6)
        assert sol.lambda_star == pytest.approx(1.0, abs=1e-6)
        lam = np.logspace(-3, 3, 20001)
        assert sol.value == pytest.approx(np.min(0.1 * lam + np.maximum(0, 1 - lam)), abs=1e-6)

    def test_ball_supremum(self):
        sol = solve_outer(ball_problem())
        assert sol.value == pytest.approx(3.0, abs=1e-6)
        assert sol.boundary == "lower"

    def test_symmetric_weights(self):
        prob = DroProblem([0.5, 0.5], [1.0, 1.0], np.zeros((2, 2)), Alpha(2), 0.1)
        assert solve_outer(prob).weights == pytest.approx([0.5, 0.5], abs=1e-9)

    def test_constant_loss_hits_lower_boundary(self):
        prob = DroProblem([0.5, 0.5], [2.0, 2.0], SWAP, KL(), 0.1)
        sol = solve_outer(prob)
        assert sol.boundary == "lower" and sol.value == pytest.approx(2.0, abs=1e-5)

    @pytest.mark.parametrize("D", [Alpha(2), Alpha(3), BetaMix(Alpha(2), 0.5)])
    def test_weights_ordered_by_ctransform(self, D):
        rng = np.random.default_rng(11)
        c = rng.random((4, 4)) * 2
        np.fill_diagonal(c, 0.0)
        sol = solve_outer(DroProblem(np.full(4, 0.25), rng.random(4) * 3, c, D, 0.2))
        order = np.argsort(sol.ctransform, kind="stable")
        assert np.all(np.diff(sol.weights[order]) >= -1e-9)
        assert sol.weights.sum() == pytest.approx(1.0, abs=1e-4)

    def test_betamix_floor(self):
        rng = np.random.default_rng(5)
        c = rng.random((3, 3))
        np.fill_diagonal(c, 0.0)
        sol = solve_outer(DroProblem(np.full(3, 1 / 3), [0.0, 0.2, 3.0], c, BetaMix(Alpha(2), 0.3), 0.5))
        assert sol.weights.min() >= 0.7 / 3 - 1e-9

    def test_betamix_one_equals_base(self):
        rng = np.random.default_rng(2)
        c = rng.random((3, 3))
        np.fill_diagonal(c, 0.0)
        kw = dict(baseline=[0.2, 0.5, 0.3], loss=[0.1, 1.0, 2.0], cost=c, epsilon=0.2)
        a = solve_outer(DroProblem(divergence=Alpha(2), **kw)).value
        b = solve_outer(DroProblem(divergence=BetaMix(Alpha(2), 1.0), **kw)).value
        assert a == pytest.approx(b, abs=1e-10)


class TestBruteForce:
    def test_single_sample(self):
        res = bruteforce_primal(single_sample(), grid_step=1e-3)
        assert float(res) == pytest.approx(0.1, abs=1e-3)
        assert res.lower <= res.value <= res.upper

    def test_large_budget_reaches_max_loss(self):
        prob = DroProblem([0.5, 0.5], [0.0, 1.0], SWAP, KL(), 5.0)
        assert float(bruteforce_primal(prob)) == pytest.approx(1.0, abs=1e-6)

    def test_huge_penalty_pins_baseline(self):
        prob = DroProblem([0.3, 0.7], [0.0, 1.0], SWAP, KL(), 0.5, kappa=1e6)
        assert float(bruteforce_primal(prob)) == pytest.approx(0.7, abs=1e-3)

    @pytest.mark.parametrize("D,kappa", [(KL(), 0.0), (Alpha(2), 0.2), (Alpha(3), 0.0)])
    def test_strong_duality_spot_checks(self, D, kappa):
        rng = np.random.default_rng(42)
        c = rng.random((3, 3)) * 2
        c = c + c.T
        np.fill_diagonal(c, 0.0)
        prob = DroProblem(rng.dirichlet(np.ones(3)), rng.random(3) * 2, c, D, 0.1, kappa)
        assert solve_outer(prob).value == pytest.approx(float(bruteforce_primal(prob)), abs=1e-3)


def test_value_nondecreasing_in_epsilon():
    rng = np.random.default_rng(9)
    c = rng.random((3, 3))
    np.fill_diagonal(c, 0.0)
    vals = [solve_outer(DroProblem([0.2, 0.3, 0.5], [0.0, 1.0, 2.0], c, Alpha(2), e)).value
            for e in (0.01, 0.05, 0.1, 0.5, 1.0, 3.0)]
    assert np.all(np.diff(vals) >= -1e-7)


class TestVariants:
    base = dict(baseline=[0.25, 0.25, 0.5], loss=[0.0, 1.0, 2.0],
                cost=np.array([[0.0, 0.5, 1.0], [0.5, 0.0, 0.5], [1.0, 0.5, 0.0]]),
                divergence=KL(), epsilon=0.2)

    def test_nat_is_convex_combination(self):
        plain = solve_outer(DroProblem(**self.base)).value
        nat = solve_outer(DroProblem(variant=Variant("nat", t=0.4), **self.base)).value
        mean = 0.25 * 0 + 0.25 * 1 + 0.5 * 2
        assert nat == pytest.approx(0.4 * mean + 0.6 * plain, abs=1e-9)

    def test_asym_robustifies_only_masked_part(self):
        mask = (False, True, True)
        prob = DroProblem(variant=Variant("asym", s=0.5, mask=mask), **self.base)
        sol = solve_outer(prob)
        sub = DroProblem([1 / 3, 2 / 3], self.base["loss"], self.base["cost"][1:], KL(), 0.2,
                         sample_index=[1, 2])
        assert sol.value == pytest.approx(0.5 * 0.0 + 0.5 * solve_outer(sub).value, abs=1e-9)

    def test_asym_nat(self):
        mask = (False, True, True)
        prob = DroProblem(variant=Variant("asym_nat", s=0.5, t=0.5, mask=mask), **self.base)
        sub = DroProblem([1 / 3, 2 / 3], self.base["loss"], self.base["cost"][1:], KL(), 0.2,
                         sample_index=[1, 2])
        nat1 = (1 * 1 + 2 * 2) / 3
        expected = 0.25 * nat1 + 0.25 * solve_outer(sub).value
        assert solve_outer(prob).value == pytest.approx(expected, abs=1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            Variant("nat", t=1.0)
        with pytest.raises(ValueError):
            Variant("asym", s=0.5)
        with pytest.raises(ValueError):
            DroProblem(variant=Variant("asym", s=0.5, mask=(True, True, True)), **self.base)


def test_problem_round_trip():
    prob = ball_problem()
    again = DroProblem.from_dict(prob.to_dict())
    assert np.array_equal(again.cost, prob.cost)
    assert again.sample_index == prob.sample_index
    assert solve_outer(again).value == solve_outer(prob).value
