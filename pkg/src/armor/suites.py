"""Hermetic verification suites behind ``armor verify``.

Every suite returns a list of check records ``{"suite", "name", "passed",
...measurements}``. Reports contain no wall-clock values so that two runs
with the same seed serialize to identical bytes; timings are returned
separately by :func:`run_suites`.
"""
from __future__ import annotations

import itertools
import math
import time
from typing import Callable, Dict, List

import numpy as np

from .dataio import gen_binary
from .dcdiv import dc_primal, dc_scan_r, upper_bound
from .demo import DemoSettings, run_demo
from .dro import DroProblem, bruteforce_primal, solve_outer
from .fdiv import Alpha, BetaMix, Indicator, KL, d_f
from .innermax import InnerConfig
from .nnet import backward, ce_grad_logits, forward, init_mlp, loss_ce
from .trainer import TrainConfig, train
from .transport import BallCostSpec, SampleCostSpec, build_ball_cost, ot_cost, scale_cost

__all__ = ["SUITES", "run_suites", "duality_instances", "weight_instances", "fixture_problem"]

DUALITY_TOL = 1e-3
FIXTURE_TOL = 1e-6
INTERP_REL = 0.02
GRAD_REL = 1e-4


def _check(suite, name, passed, **info):
    return {"suite": suite, "name": name, "passed": bool(passed), **info}


def _f(x):
    return None if x is None else float(x)


def duality_instances(seed: int = 0) -> List[DroProblem]:
    """The 20-instance certification suite: every (D, eps, kappa) combination, then two extras."""
    rng = np.random.default_rng(seed)
    combos = list(itertools.product((KL(), Alpha(2.0), Alpha(3.0)), (0.05, 0.1, 0.5), (0.0, 0.2)))
    combos += [combos[1], combos[8]]
    out = []
    for D, eps, kappa in combos:
        m = int(rng.integers(2, 4))
        c = rng.random((m, m)) * 2.0
        c = (c + c.T) / 2.0
        np.fill_diagonal(c, 0.0)
        P = rng.dirichlet(np.ones(m))
        loss = rng.random(m) * 2.0
        out.append(DroProblem(P, loss, c, D, eps, kappa))
    return out


def weight_instances(seed: int = 0) -> List[DroProblem]:
    """Alpha members of the duality suite plus beta-mixtures of them on uniform baselines."""
    base = [p for p in duality_instances(seed) if p.divergence.kind == "alpha"]
    mixed = []
    for k, p in enumerate(base):
        beta = (0.3, 0.5, 0.8)[k % 3]
        n = p.baseline.size
        mixed.append(DroProblem(np.full(n, 1.0 / n), p.loss, p.cost,
                                BetaMix(p.divergence, beta), p.epsilon, p.kappa))
    return base + mixed


def fixture_problem() -> DroProblem:
    return DroProblem([1.0, 0.0], [0.0, 1.0], [[0.0, 1.0], [1.0, 0.0]], KL(), 0.1)


def suite_duality(seed: int) -> List[dict]:
    checks = []
    for k, prob in enumerate(duality_instances(seed)):
        dual = solve_outer(prob)
        primal = bruteforce_primal(prob, grid_step=1e-2)
        gap = abs(dual.value - primal.value)
        checks.append(_check("duality", f"instance_{k:02d}", gap <= DUALITY_TOL,
                             divergence=str(prob.divergence), epsilon=prob.epsilon,
                             kappa=prob.kappa, size=int(prob.loss.size), dual=dual.value,
                             primal=primal.value, gap=gap, tol=DUALITY_TOL))
    return checks


def suite_fixtures(seed: int) -> List[dict]:
    sol = solve_outer(fixture_problem())
    err = max(abs(sol.value - 0.1), abs(sol.lambda_star - 1.0))
    checks = [_check("fixtures", "single_sample_kl", err <= FIXTURE_TOL, value=sol.value,
                     lambda_star=sol.lambda_star, error=err, tol=FIXTURE_TOL)]
    points = [0.0, 1.0, 2.0]
    cost = build_ball_cost(BallCostSpec(1.0), points, points)
    ball = DroProblem([0.5, 0.0, 0.5], [0.0, 1.0, 5.0], cost, Indicator(), 0.1)
    sol = solve_outer(ball)
    err = abs(sol.value - 3.0)
    checks.append(_check("fixtures", "ball_indicator", err <= FIXTURE_TOL, value=sol.value,
                         boundary=sol.boundary, error=err, tol=FIXTURE_TOL))
    return checks


INTERP_CASES = (
    ("kl_swap", KL(), [[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [0.2, 0.8]),
    ("alpha2_skew", Alpha(2.0), [[0.0, 2.0], [0.5, 0.0]], [0.3, 0.7], [0.6, 0.4]),
)
DRO_INTERP_CASES = (
    ("kl_dro", KL(), [[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [0.0, 1.0], 0.1),
    ("alpha2_dro", Alpha(2.0), [[0.0, 2.0], [0.5, 0.0]], [0.3, 0.7], [1.0, 0.2], 0.2),
)


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def suite_interpolation(seed: int) -> List[dict]:
    checks = []
    for name, D, c, P, Q in INTERP_CASES:
        scan = dc_scan_r(D, c, P, Q)
        values = [v for _, v in scan]
        scaled = [v / r for r, v in scan]
        transport = ot_cost(np.asarray(c), np.asarray(P), np.asarray(Q))[0]
        fdiv = d_f(D, Q, P)
        small = _rel(scaled[0], transport)
        large = _rel(values[-1], fdiv)
        mono = all(b >= a - 1e-6 for a, b in zip(values, values[1:])) and all(
            b <= a + 1e-6 for a, b in zip(scaled, scaled[1:]))
        checks.append(_check("interpolation", f"{name}_small_r", small <= INTERP_REL,
                             scaled_value=scaled[0], ot_cost=transport, rel_error=small))
        checks.append(_check("interpolation", f"{name}_large_r", large <= INTERP_REL,
                             value=values[-1], d_f=fdiv, rel_error=large))
        checks.append(_check("interpolation", f"{name}_monotone", mono, values=values,
                             scaled=scaled))
    wall = [[0.0, math.inf], [math.inf, 0.0]]
    for name, D, c, P, loss, eps in DRO_INTERP_CASES:
        small_r, large_r = 1e-4, 1e4
        limit_ot = bruteforce_primal(DroProblem(P, loss, c, Indicator(), eps)).value
        near_ot = bruteforce_primal(DroProblem(P, loss, scale_cost(c, small_r), D, small_r * eps)).value
        limit_f = bruteforce_primal(DroProblem(P, loss, wall, D, eps)).value
        near_f = bruteforce_primal(DroProblem(P, loss, scale_cost(c, large_r), D, eps)).value
        e1, e2 = _rel(near_ot, limit_ot), _rel(near_f, limit_f)
        checks.append(_check("interpolation", f"{name}_small_r", e1 <= INTERP_REL,
                             value=near_ot, limit=limit_ot, rel_error=e1))
        checks.append(_check("interpolation", f"{name}_large_r", e2 <= INTERP_REL,
                             value=near_f, limit=limit_f, rel_error=e2))
    return checks


def suite_properties(seed: int, trials: int = 100) -> List[dict]:
    rng = np.random.default_rng(seed)
    kinds = (KL(), Alpha(2.0), Alpha(3.0))
    fails = {"identity": 0, "separation": 0, "upper_bound": 0, "convexity": 0}
    worst = {"identity": 0.0, "separation": math.inf, "upper_bound": -math.inf, "convexity": -math.inf}
    for t in range(trials):
        D = kinds[t % 3]
        m = int(rng.integers(2, 5))
        c = rng.random((m, m)) * 2.0
        np.fill_diagonal(c, 0.0)
        mu = rng.dirichlet(np.ones(m))
        same = dc_primal(D, c, mu, mu).value
        worst["identity"] = max(worst["identity"], same)
        fails["identity"] += same > 1e-9
        nu = rng.dirichlet(np.ones(m))
        while np.abs(nu - mu).sum() < 0.05:
            nu = rng.dirichlet(np.ones(m))
        val = dc_primal(D, c, mu, nu).value
        worst["separation"] = min(worst["separation"], val)
        fails["separation"] += val < 1e-6
        excess = val - upper_bound(D, c, mu, nu)
        worst["upper_bound"] = max(worst["upper_bound"], excess)
        fails["upper_bound"] += excess > 1e-7
        nu2 = rng.dirichlet(np.ones(m))
        w = float(rng.random())
        mix = dc_primal(D, c, mu, w * nu + (1.0 - w) * nu2).value
        chord = w * val + (1.0 - w) * dc_primal(D, c, mu, nu2).value
        worst["convexity"] = max(worst["convexity"], mix - chord)
        fails["convexity"] += mix > chord + 1e-7
    return [_check("properties", k, fails[k] == 0, failures=int(fails[k]), trials=trials,
                   worst=_f(worst[k])) for k in fails]


def suite_weights(seed: int) -> List[dict]:
    checks = []
    for k, prob in enumerate(weight_instances(seed)):
        sol = solve_outer(prob)
        total = float(sol.weights.sum())
        expected = float(sol.adversarial @ prob.loss)
        penalty = 0.0
        if prob.kappa > 0:
            penalty = prob.kappa * dc_primal(prob.divergence, prob.cost, prob.baseline,
                                             sol.adversarial).value
        ident = abs(expected - penalty - sol.value)
        ok = abs(total - 1.0) <= 1e-4 and ident <= 1e-3
        info = dict(divergence=str(prob.divergence), kappa=prob.kappa, weight_sum=total,
                    identity_error=ident)
        if prob.divergence.kind == "betamix":
            floor = (1.0 - prob.divergence.beta) / prob.baseline.size
            low = float(sol.weights.min())
            ok = ok and low >= floor - 1e-9
            info.update(min_weight=low, floor=floor)
        checks.append(_check("weights", f"instance_{k:02d}", ok, **info))
    return checks


GRAD_CONFIGS = ((3, 5, 2), (4, 8, 8, 3), (6, 16, 16, 4), (5, 32, 64, 3))


def _fd_compare(fn, theta, analytic, h, mask_fn):
    worst = 0.0
    skipped = 0
    for idx in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[idx] += h
        minus[idx] -= h
        if mask_fn(plus) != mask_fn(minus):
            skipped += 1
            continue
        numeric = (fn(plus) - fn(minus)) / (2.0 * h)
        err = abs(numeric - analytic[idx]) / max(abs(numeric), abs(analytic[idx]), 1e-6)
        worst = max(worst, err)
    return worst, skipped


def suite_gradients(seed: int, h: float = 1e-5) -> List[dict]:
    checks = []
    for k, sizes in enumerate(GRAD_CONFIGS):
        rng = np.random.default_rng(seed + k)
        params = init_mlp(sizes, seed=seed + k)
        x = rng.random((3, sizes[0]))
        y = rng.integers(0, sizes[-1], size=3)
        shapes = [(w.shape, b.shape) for w, b in params.layers]

        def unflatten(vec):
            layers, pos = [], 0
            for ws, bs in shapes:
                nw, nb = int(np.prod(ws)), int(np.prod(bs))
                layers.append((vec[pos:pos + nw].reshape(ws), vec[pos + nw:pos + nw + nb]))
                pos += nw + nb
            return type(params)(layers)

        def loss_of(p, inputs):
            return float(np.sum(loss_ce(forward(p, inputs)[0], y)))

        def pattern(p, inputs):
            return tuple(tuple((z > 0).ravel()) for z in forward(p, inputs)[1].pre[:-1])

        logits, trace = forward(params, x)
        grads, gx = backward(params, trace, ce_grad_logits(logits, y))
        theta = params.flat()
        w_err, w_skip = _fd_compare(lambda v: loss_of(unflatten(v), x), theta, grads.flat(), h,
                                    lambda v: pattern(unflatten(v), x))
        x_err, x_skip = _fd_compare(lambda v: loss_of(params, v.reshape(x.shape)), x.ravel(),
                                    gx.ravel(), h, lambda v: pattern(params, v.reshape(x.shape)))
        checks.append(_check("gradients", f"mlp_{'x'.join(map(str, sizes))}",
                             max(w_err, x_err) < GRAD_REL, param_rel_error=w_err,
                             input_rel_error=x_err, skipped=w_skip + x_skip, tol=GRAD_REL))
    return checks


def suite_binary(seed: int) -> List[dict]:
    ds = gen_binary(256, 12, seed=seed, noise=0.05)
    inner = InnerConfig(M=4, domain="binary_monotone", cost=SampleCostSpec(0.05, 1.0, "l1"))
    cfg = TrainConfig(method="armor", epochs=3, batch=32, hidden=(16,), epsilon=0.1,
                      cost=SampleCostSpec(0.05, 1.0, "l1"), inner=inner, seed=seed)
    _, log = train(ds, cfg)
    violations = sum(r.get("violations", 0) for r in log.records)
    return [_check("binary", "monotone_flips_only", violations == 0, violations=int(violations),
                   batches=len(log.records))]


def suite_demo(seed: int) -> List[dict]:
    settings = DemoSettings(seeds=(seed, seed + 1, seed + 2))
    rep = run_demo(settings)
    runs = rep["runs"]
    return [
        _check("demo", "robust_gain_20pp", rep["gain_met"],
               gains=[r["robust_gain"] for r in runs],
               ceilings=[r["robust_ceiling"] for r in runs],
               attainable=[r["gain_attainable"] for r in runs], runs=runs),
        _check("demo", "clean_drop_3pp", rep["clean_drop_met"],
               drops=[r["clean_drop"] for r in runs]),
        _check("demo", "robust_improves", rep["robust_improves"],
               gains=[r["robust_gain"] for r in runs]),
    ]


SUITES: Dict[str, Callable[[int], List[dict]]] = {
    "duality": suite_duality,
    "fixtures": suite_fixtures,
    "interpolation": suite_interpolation,
    "properties": suite_properties,
    "weights": suite_weights,
    "gradients": suite_gradients,
    "binary": suite_binary,
    "demo": suite_demo,
}


def run_suites(name: str, seed: int = 0):
    """Run one suite (or ``"all"``); returns ``(checks, seconds_per_suite)``."""
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise KeyError(name)
    checks, timing = [], {}
    for n in names:
        start = time.perf_counter()
        checks.extend(SUITES[n](seed))
        timing[n] = time.perf_counter() - start
    return checks, timing
