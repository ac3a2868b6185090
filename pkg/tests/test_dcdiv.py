import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from armor.errors import DimensionError
from armor.fdiv import Alpha, BetaMix, Indicator, KL, d_f
from armor.dcdiv import dc_primal, dc_scan_r, upper_bound
from armor.transport import ot_cost, scale_cost

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def eta_grid_oracle(D, c, P, Q, step=1e-3):
    """Exhaustive search over eta = (e, 1 - e), then a bounded polish near the best cell."""

    def objective(e):
        eta = np.array([e, 1.0 - e])
        div = d_f(D, eta, P)
        if not math.isfinite(div):
            return math.inf
        return div + ot_cost(c, eta, Q)[0]

    grid = np.arange(0.0, 1.0 + step / 2, step)
    vals = np.array([objective(e) for e in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    polished = minimize_scalar(objective, bounds=(lo, hi), method="bounded",
                               options={"xatol": 1e-12})
    return min(float(vals[k]), float(polished.fun))


def random_instance(rng, n):
    c = rng.random((n, n)) * 2
    c = c + c.T
    np.fill_diagonal(c, 0.0)
    return c, rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))


class TestExamples:
    @pytest.mark.parametrize("D", [KL(), Alpha(2), BetaMix(Alpha(3), 0.5)])
    def test_equal_marginals(self, D):
        mu = np.array([0.2, 0.5, 0.3])
        c = np.abs(np.subtract.outer(np.arange(3), np.arange(3))).astype(float)
        assert dc_primal(D, c, mu, mu).value == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_baseline(self):
        res = dc_primal(KL(), SWAP, [1.0, 0.0], [0.6, 0.4])
        assert res.value == pytest.approx(0.4, abs=1e-9)
        assert res.eta_star == pytest.approx([1.0, 0.0])
        assert eta_grid_oracle(KL(), SWAP, np.array([1.0, 0.0]), np.array([0.6, 0.4])) == \
            pytest.approx(0.4, abs=1e-9)

    def test_large_scale_recovers_divergence(self):
        P, Q = np.array([0.5, 0.5]), np.array([0.2, 0.8])
        direct = 0.2 * math.log(0.4) + 0.8 * math.log(1.6)
        assert direct == pytest.approx(0.192745, abs=1e-6)
        val = dc_primal(KL(), scale_cost(SWAP, 1e4), P, Q).value
        assert val == pytest.approx(direct, rel=0.01)

    def test_indicator_is_plain_transport(self):
        rng = np.random.default_rng(3)
        c, P, Q = random_instance(rng, 3)
        assert dc_primal(Indicator(), c, P, Q).value == pytest.approx(ot_cost(c, P, Q)[0], abs=1e-12)

    def test_unreachable_support_is_infinite(self):
        wall = np.array([[0.0, math.inf], [math.inf, 0.0]])
        res = dc_primal(KL(), wall, [1.0, 0.0], [0.5, 0.5])
        assert res.value == math.inf

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            dc_primal(KL(), np.zeros((2, 3)), [0.5, 0.5], [0.5, 0.5])


@pytest.mark.parametrize("D", [KL(), Alpha(2), Alpha(3), BetaMix(Alpha(2), 0.6)])
@pytest.mark.parametrize("seed", range(6))
def test_matches_eta_grid(D, seed):
    rng = np.random.default_rng(100 + seed)
    c = np.array([[0.0, rng.uniform(0.05, 2)], [rng.uniform(0.05, 2), 0.0]])
    P, Q = rng.dirichlet([2, 2]), rng.dirichlet([2, 2])
    res = dc_primal(D, c, P, Q)
    assert res.converged
    assert res.value == pytest.approx(eta_grid_oracle(D, c, P, Q), abs=1e-4)


@pytest.mark.parametrize("seed", range(25))
def test_invariants_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    c, P, Q = random_instance(rng, n)
    D = [KL(), Alpha(2), Alpha(1.5)][seed % 3]
    res = dc_primal(D, c, P, Q)
    assert res.value >= 0
    assert res.value <= upper_bound(D, c, P, Q) + 1e-7
    # the returned eta and plan realise the value
    assert np.allclose(res.plan.sum(axis=0), Q, atol=1e-9)
    assert np.allclose(res.plan.sum(axis=1), res.eta_star, atol=1e-9)
    realised = d_f(D, res.eta_star, P) + float(np.sum(c * res.plan))
    assert realised == pytest.approx(res.value, abs=1e-7)
    assert np.all(res.eta_star[P == 0] == 0)
    # convexity in Q
    Q2 = rng.dirichlet(np.ones(n))
    t = float(rng.random())
    mid = dc_primal(D, c, P, t * Q + (1 - t) * Q2).value
    assert mid <= t * res.value + (1 - t) * dc_primal(D, c, P, Q2).value + 1e-7


@pytest.mark.parametrize("seed", range(10))
def test_separation(seed):
    rng = np.random.default_rng(500 + seed)
    n = int(rng.integers(2, 5))
    c, mu, nu = random_instance(rng, n)
    while np.abs(mu - nu).sum() < 0.05:
        nu = rng.dirichlet(np.ones(n))
    assert dc_primal(KL(), c, mu, mu).value <= 1e-9
    assert dc_primal(KL(), c, mu, nu).value >= 1e-6


class TestScan:
    P, Q = np.array([0.5, 0.5]), np.array([0.2, 0.8])

    def test_limits(self):
        scan = dict(dc_scan_r(KL(), SWAP, self.P, self.Q, [1e-4, 1e4]))
        ot = ot_cost(SWAP, self.P, self.Q)[0]
        assert scan[1e-4] / 1e-4 == pytest.approx(ot, rel=0.02)
        assert scan[1e4] == pytest.approx(d_f(KL(), self.Q, self.P), rel=0.02)

    def test_monotone_both_ways(self):
        rungs = [1e-4, 1e-3, 1e-2, 0.1, 1, 10, 100, 1e3, 1e4]
        scan = dc_scan_r(Alpha(2), SWAP, self.P, self.Q, rungs)
        vals = np.array([v for _, v in scan])
        assert np.all(np.diff(vals) >= -1e-6)
        assert np.all(np.diff(vals / np.array(rungs)) <= 1e-6)

    def test_constant_ladder_is_deterministic(self):
        vals = [v for _, v in dc_scan_r(KL(), SWAP, self.P, self.Q, [1, 1, 1])]
        assert vals[0] == vals[1] == vals[2]

    def test_bad_ladder(self):
        with pytest.raises(ValueError):
            dc_scan_r(KL(), SWAP, self.P, self.Q, [1, 0.5])
        with pytest.raises(ValueError):
            dc_scan_r(KL(), SWAP, self.P, self.Q, [0.0, 1])
