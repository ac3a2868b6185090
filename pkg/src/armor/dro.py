"""Finite-dimensional distributionally robust optimization.

The worst-case expectation over the neighborhood ``{Q : D^c(Q||P) <= eps}``
(optionally with a penalty ``kappa D^c(Q||P)``) equals the convex dual

    min_{lam > 0, rho}  eps*lam + rho + s * E_P f*(L^c_s - rho/s),   s = lam + kappa,

with ``L^c_s(x_i) = max_j loss_j / s - c_ij``. Writing ``r = rho / s`` the
inner minimization over ``r`` defines a convex functional ``Psi(L^c)`` which
has closed forms for KL (log-mean-exp) and the indicator divergence (mean).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .dcdiv import dc_below, dc_primal
from .errors import DimensionError, NoFeasibleCandidateError, NonConvexityError
from .fdiv import DivergenceSpec, f_star, f_star_prime, needs_rho

__all__ = [
    "Variant",
    "DroProblem",
    "DualSolution",
    "BruteForceResult",
    "ctransform_exact",
    "outer_objective",
    "solve_outer",
    "bruteforce_primal",
    "LAMBDA_MIN",
    "LAMBDA_MAX",
]

LAMBDA_MIN = 1e-6
LAMBDA_MAX = 1e6
_SCAN_POINTS = 49
_TIE_TOL = 1e-8
_EDGE_TOL = 1e-6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Variant:
    """How the robust term is combined with natural-sample losses.

    ``plain``: robust value only. ``nat``: ``t E_P[L] + (1-t) robust``.
    ``asym``: ``(1-s) E_{P0}[L] + s robust(P1)`` where ``mask`` selects the
    samples of ``P1``. ``asym_nat``: ``(1-s) E_{P0}[L] + t s E_{P1}[L] +
    (1-t) s robust(P1)``.
    """

    kind: str = "plain"
    t: Optional[float] = None
    s: Optional[float] = None
    mask: Optional[Tuple[bool, ...]] = None

    def __post_init__(self):
        if self.kind not in ("plain", "nat", "asym", "asym_nat"):
            raise ValueError(f"unknown variant {self.kind!r}")
        if self.kind in ("nat", "asym_nat") and not (self.t is not None and 0 < self.t < 1):
            raise ValueError("variant needs t in (0, 1)")
        if self.kind in ("asym", "asym_nat"):
            if not (self.s is not None and 0 < self.s < 1):
                raise ValueError("variant needs s in (0, 1)")
            if self.mask is None:
                raise ValueError("asymmetric variants need a partition mask")
            object.__setattr__(self, "mask", tuple(bool(m) for m in self.mask))

    def to_dict(self):
        d = {"kind": self.kind}
        for k in ("t", "s"):
            if getattr(self, k) is not None:
                d[k] = getattr(self, k)
        if self.mask is not None:
            d["mask"] = list(self.mask)
        return d

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        return cls(d.get("kind", "plain"), d.get("t"), d.get("s"), d.get("mask"))


@dataclass
class DroProblem:
    baseline: np.ndarray
    loss: np.ndarray
    cost: np.ndarray
    divergence: DivergenceSpec
    epsilon: float
    kappa: float = 0.0
    variant: Variant = field(default_factory=Variant)
    sample_index: Optional[Sequence[int]] = None

    def __post_init__(self):
        self.baseline = np.asarray(self.baseline, dtype=float)
        self.loss = np.asarray(self.loss, dtype=float)
        self.cost = np.asarray(self.cost, dtype=float)
        n, m = self.baseline.size, self.loss.size
        if self.cost.shape != (n, m):
            raise DimensionError(f"cost {self.cost.shape} does not match ({n}, {m})")
        if np.any(self.baseline < 0) or abs(self.baseline.sum() - 1.0) > 1e-9:
            raise ValueError("baseline is not a probability vector")
        if np.any(self.cost < 0) or np.any(np.isnan(self.cost)):
            raise ValueError("costs must be nonnegative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.kappa >= 0:
            raise ValueError("kappa must be nonnegative")
        if self.sample_index is None:
            if m < n:
                raise ValueError("sample_index is required when there are fewer candidates than samples")
            self.sample_index = tuple(range(n))
        self.sample_index = tuple(int(k) for k in self.sample_index)
        if len(self.sample_index) != n or any(not 0 <= k < m for k in self.sample_index):
            raise DimensionError("sample_index must map each sample to a candidate")
        if self.variant.mask is not None:
            mask = np.asarray(self.variant.mask, dtype=bool)
            if mask.size != n:
                raise DimensionError("partition mask length differs from the sample count")
            if self.baseline[mask].sum() <= 0 or self.baseline[~mask].sum() <= 0:
                raise ValueError("both partition components need positive baseline mass")

    @property
    def sample_loss(self) -> np.ndarray:
        return self.loss[list(self.sample_index)]

    def robust_part(self):
        """Baseline and cost rows of the component that is robustified."""
        if self.variant.mask is None:
            return self.baseline, self.cost, np.arange(self.baseline.size)
        rows = np.flatnonzero(np.asarray(self.variant.mask, dtype=bool))
        p1 = self.baseline[rows]
        return p1 / p1.sum(), self.cost[rows], rows

    def wrap(self, robust: float) -> float:
        """Combine a robust value with the natural-sample terms of the variant."""
        v = self.variant
        sl = self.sample_loss
        if v.kind == "plain":
            return robust
        if v.kind == "nat":
            return v.t * float(self.baseline @ sl) + (1.0 - v.t) * robust
        mask = np.asarray(v.mask, dtype=bool)
        p0 = self.baseline[~mask] / self.baseline[~mask].sum()
        nat0 = float(p0 @ sl[~mask])
        if v.kind == "asym":
            return (1.0 - v.s) * nat0 + v.s * robust
        p1 = self.baseline[mask] / self.baseline[mask].sum()
        nat1 = float(p1 @ sl[mask])
        return (1.0 - v.s) * nat0 + v.t * v.s * nat1 + (1.0 - v.t) * v.s * robust

    def to_dict(self):
        def enc(a):
            return [[None if math.isinf(x) else x for x in row] for row in a.tolist()]

        return {
            "baseline": self.baseline.tolist(),
            "loss": self.loss.tolist(),
            "cost": enc(self.cost),
            "divergence": self.divergence.to_dict(),
            "epsilon": self.epsilon,
            "kappa": self.kappa,
            "variant": self.variant.to_dict(),
            "sample_index": list(self.sample_index),
        }

    @classmethod
    def from_dict(cls, d):
        """Inverse of :meth:`to_dict`; ``null`` or ``"inf"`` cost entries mean +inf."""
        cost = np.array(
            [[math.inf if x is None or x == "inf" else float(x) for x in row] for row in d["cost"]]
        )
        return cls(
            baseline=d["baseline"],
            loss=d["loss"],
            cost=cost,
            divergence=DivergenceSpec.from_dict(d["divergence"]),
            epsilon=float(d["epsilon"]),
            kappa=float(d.get("kappa", 0.0)),
            variant=Variant.from_dict(d.get("variant")),
            sample_index=d.get("sample_index"),
        )


@dataclass
class DualSolution:
    lambda_star: float
    rho_star: Optional[float]
    value: float
    ctransform: np.ndarray
    argmax_points: np.ndarray
    weights: np.ndarray
    trace: List[Tuple[float, float]]
    boundary: Optional[str] = None
    robust_value: float = 0.0
    robust_rows: Optional[np.ndarray] = None
    argmax_lower: Optional[np.ndarray] = None
    argmax_upper: Optional[np.ndarray] = None
    mix: float = 0.0
    adversarial: Optional[np.ndarray] = None

    def to_dict(self):
        return {
            "lambda_star": self.lambda_star,
            "rho_star": self.rho_star,
            "value": self.value,
            "robust_value": self.robust_value,
            "boundary": self.boundary,
            "ctransform": self.ctransform.tolist(),
            "argmax_points": self.argmax_points.tolist(),
            "weights": self.weights.tolist(),
            "mix": self.mix,
            "adversarial": None if self.adversarial is None else self.adversarial.tolist(),
        }


def ctransform_exact(loss, cost, lam):
    """``max_j loss_j/lam - cost_ij`` per row, with lowest-index argmax."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    loss = np.asarray(loss, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[1] != loss.size:
        raise DimensionError(f"cost {cost.shape} does not match {loss.size} candidates")
    finite = np.isfinite(cost)
    dead = np.flatnonzero(~finite.any(axis=1))
    if dead.size:
        raise NoFeasibleCandidateError(int(dead[0]))
    scores = np.where(finite, loss[None, :] / lam - np.where(finite, cost, 0.0), -np.inf)
    arg = np.argmax(scores, axis=1)
    return scores[np.arange(cost.shape[0]), arg], arg


def _ctransform_scores(loss, cost, scale):
    finite = np.isfinite(cost)
    return np.where(finite, loss[None, :] / scale - np.where(finite, cost, 0.0), -np.inf)


def _solve_shift(spec, P, Lc):
    """Root ``r`` of ``E_P (f*)'(L^c - r) = 1`` for Alpha-type divergences."""
    base = spec.base if spec.kind == "betamix" else spec
    a = base.alpha
    live = P > 0
    lc, p = Lc[live], P[live]
    hi = float(lc.max())
    lo = float(lc.min()) - 1.0 / (a - 1.0) - 1.0

    def g(r):
        return float(p @ f_star_prime(base, lc - r)) - 1.0

    span = max(1.0, abs(hi), abs(lo))
    return brentq(g, lo, hi, xtol=1e-15 * span, rtol=4 * np.finfo(float).eps, maxiter=500)


def _psi(spec: DivergenceSpec, P, Lc, r=None):
    """``(Psi, r, weights)``; ``r`` is optimized when not supplied."""
    live = P > 0
    if spec.kind == "indicator":
        return float(P[live] @ Lc[live]), None, P.copy()
    kl_like = spec.kind == "kl" or (spec.kind == "betamix" and spec.base.kind == "kl")
    if kl_like:
        beta = spec.beta if spec.kind == "betamix" else 1.0
        m = float(Lc[live].max())
        e = np.where(live, P * np.exp(np.where(live, Lc, m) - m), 0.0)
        tot = e.sum()
        lme = m + math.log(tot)
        mean = float(P[live] @ Lc[live])
        w = beta * e / tot + (1.0 - beta) * P
        return beta * lme + (1.0 - beta) * mean, None, w
    if r is None:
        r = _solve_shift(spec, P, Lc)
    z = np.where(live, Lc - r, 0.0)
    psi = r + float(P[live] @ f_star(spec, z[live]))
    w = np.where(live, P * f_star_prime(spec, z), 0.0)
    return psi, r, w


def _robust_at(problem: DroProblem, lam: float, rho=None):
    P, cost, _ = problem.robust_part()
    scale = lam + problem.kappa
    Lc, arg = ctransform_exact(problem.loss, cost, scale)
    r = None if rho is None else rho / scale
    psi, r, w = _psi(problem.divergence, P, Lc, r)
    return problem.epsilon * lam + scale * psi, psi, r, Lc, arg, w


def outer_objective(problem: DroProblem, lam: float, rho: Optional[float] = None) -> float:
    """Dual objective at ``(lam, rho)``, wrapped by the problem's variant.

    For Alpha-type divergences a missing ``rho`` is minimized out; KL, its
    beta-mixture and the indicator divergence take no ``rho``.
    """
    if rho is not None and not needs_rho(problem.divergence):
        raise ValueError(f"{problem.divergence} takes no rho")
    value = _robust_at(problem, lam, rho)[0]
    return problem.wrap(value)


def _profile(problem, lam):
    return _robust_at(problem, lam)[0]


def _golden(fn, a, b, tol=1e-13, max_iter=300):
    # minimize a unimodal fn on [a, b] (here: log lambda)
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a), abs(b)):
            break
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = fn(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def _check_unimodal(lams, vals, trace):
    k = int(np.argmin(vals))
    for i in range(len(vals) - 1):
        tol = 1e-9 * (1.0 + abs(vals[i]) + abs(vals[i + 1]))
        rising = vals[i + 1] - vals[i]
        if (i < k and rising > tol) or (i >= k and rising < -tol):
            raise NonConvexityError(
                f"dual objective is not unimodal near lambda={lams[i]:.3g}", list(trace)
            )
    return k


def solve_outer(problem: DroProblem, lam_min: float = LAMBDA_MIN, lam_max: float = LAMBDA_MAX
                ) -> DualSolution:
    """Minimize the dual over ``lam`` (and ``rho``); returns value and weights."""
    trace: List[Tuple[float, float]] = []

    def phi(lam):
        v = _profile(problem, lam)
        trace.append((lam, v))
        return v

    lams = np.logspace(math.log10(lam_min), math.log10(lam_max), _SCAN_POINTS)
    vals = np.array([phi(float(x)) for x in lams])
    if not np.all(np.isfinite(vals)):
        raise NonConvexityError("dual objective is not finite on the lambda grid", trace)
    k = _check_unimodal(lams, vals, trace)
    lo = math.log(lams[max(k - 1, 0)])
    hi = math.log(lams[min(k + 1, len(lams) - 1)])
    x, fx = _golden(lambda u: phi(math.exp(u)), lo, hi)
    lam_star, boundary = math.exp(x), None
    # golden search leaves a sliver of slack next to the box edges
    if k == 0 and (vals[0] <= fx or x - lo <= _EDGE_TOL):
        lam_star, fx, boundary = float(lams[0]), float(vals[0]), "lower"
    elif k == len(lams) - 1 and (vals[-1] <= fx or hi - x <= _EDGE_TOL):
        lam_star, fx, boundary = float(lams[-1]), float(vals[-1]), "upper"

    value, psi, r, Lc, arg, w = _robust_at(problem, lam_star)
    P, cost, rows = problem.robust_part()
    scale = lam_star + problem.kappa
    scores = _ctransform_scores(problem.loss, cost, scale)
    near = scores >= Lc[:, None] - _TIE_TOL * np.maximum(1.0, np.abs(Lc))[:, None]
    masked = np.where(near, problem.loss[None, :], np.nan)
    y_lo = np.nanargmax(masked, axis=1)  # selection on the small-lambda side
    y_hi = np.nanargmin(masked, axis=1)  # selection on the large-lambda side
    eps = problem.epsilon
    d_minus = eps + psi - float(w @ problem.loss[y_lo]) / scale
    d_plus = eps + psi - float(w @ problem.loss[y_hi]) / scale
    if d_plus - d_minus > 0:
        theta = min(max(d_plus / (d_plus - d_minus), 0.0), 1.0)
    else:
        theta = 0.0
    adversarial = np.zeros(problem.loss.size)
    np.add.at(adversarial, y_lo, theta * w)
    np.add.at(adversarial, y_hi, (1.0 - theta) * w)
    return DualSolution(
        lambda_star=lam_star,
        rho_star=None if r is None else r * scale,
        value=problem.wrap(value),
        ctransform=Lc,
        argmax_points=arg,
        weights=w,
        trace=trace,
        boundary=boundary,
        robust_value=value,
        robust_rows=rows,
        argmax_lower=y_lo,
        argmax_upper=y_hi,
        mix=theta,
        adversarial=adversarial,
    )


@dataclass
class BruteForceResult:
    value: float
    lower: float
    upper: float
    q_best: Optional[np.ndarray]
    evaluations: int

    def __float__(self):
        return float(self.value)


def _simplex_grid(m, h):
    k = int(round(1.0 / h))
    if m == 1:
        return np.ones((1, 1))
    if m == 2:
        a = np.arange(k + 1) / k
        return np.stack([a, 1.0 - a], axis=1)
    pts = [(i / k, j / k, (k - i - j) / k) for i in range(k + 1) for j in range(k + 1 - i)]
    return np.array(pts)


def _level_segment(loss, v):
    """End points of ``{q in simplex : q . loss = v}`` (a point or a segment)."""
    m = loss.size
    pts = []
    for i in range(m):
        if abs(loss[i] - v) <= 1e-15 * max(1.0, abs(v)):
            e = np.zeros(m)
            e[i] = 1.0
            pts.append(e)
        for j in range(i + 1, m):
            lo, hi = min(loss[i], loss[j]), max(loss[i], loss[j])
            if loss[i] != loss[j] and lo < v < hi:
                q = np.zeros(m)
                q[i] = (v - loss[j]) / (loss[i] - loss[j])
                q[j] = 1.0 - q[i]
                pts.append(q)
    if not pts:
        return None
    a = pts[0]
    b = max(pts, key=lambda q: float(np.abs(q - a).sum()))
    return a, b


def _golden_max(fn, a, b, tol):
    x, fx = _golden(lambda u: -fn(u), a, b, tol=tol)
    for end in (a, b):
        fe = fn(end)
        if fe > -fx:
            x, fx = end, -fe
    return x, -fx


def bruteforce_primal(problem: DroProblem, grid_step: float = 1e-2, tol: float = 1e-9
                      ) -> BruteForceResult:
    """Worst-case expectation by direct primal search over the candidate simplex.

    Stage one scans a uniform simplex grid, deciding feasibility of each point
    with the primal divergence solver. Stage two refines along level sets of
    the expected loss: on ``{q : q . loss = v}`` the smallest divergence
    ``g(v)`` is found by a 1-D search (the divergence is convex in ``q``), and
    ``v`` is then pushed to the feasibility frontier (``kappa = 0``) or chosen
    to maximize ``v - kappa g(v)``. No dual information is used.
    ``lower``/``upper`` bracket the value up to the accuracy of ``g``.
    """
    m = problem.loss.size
    if m > 3:
        raise ValueError("brute force is limited to at most 3 candidate points")
    if not 0 < grid_step <= 1e-2:
        raise ValueError("grid_step must lie in (0, 1e-2]")
    P, cost, _ = problem.robust_part()
    loss, eps, kappa, spec = problem.loss, problem.epsilon, problem.kappa, problem.divergence
    count = [0]

    def dcv(q):
        count[0] += 1
        return dc_primal(spec, cost, P, q, tol=1e-12).value

    # stage one: uniform grid, best feasible point by the penalized objective
    grid = _simplex_grid(m, grid_step)
    order = np.argsort(-(grid @ loss), kind="stable")
    best_v, best_q = -math.inf, None
    for idx in order:
        q = grid[idx]
        ev = float(q @ loss)
        if ev <= best_v:
            break
        if kappa == 0.0:
            count[0] += 1
            if dc_below(spec, cost, P, q, eps):
                best_v, best_q = ev, q
        else:
            d = dcv(q)
            if d <= eps and ev - kappa * d > best_v:
                best_v, best_q = ev - kappa * d, q
    if best_q is None:
        return BruteForceResult(-math.inf, -math.inf, math.inf, None, count[0])

    lo_l, hi_l = float(loss.min()), float(loss.max())
    if hi_l - lo_l <= 1e-15 * max(1.0, abs(hi_l)):
        val = hi_l - kappa * dcv(best_q)
        return BruteForceResult(problem.wrap(val), problem.wrap(val), problem.wrap(val),
                                best_q, count[0])

    def g(v):
        seg = _level_segment(loss, v)
        if seg is None:
            return math.inf, None
        a, b = seg
        if np.abs(a - b).sum() <= 1e-15:
            return dcv(a), a
        t, val = _golden(lambda t: dcv(a + t * (b - a)), 0.0, 1.0, tol=1e-9)
        for end in (0.0, 1.0):
            ve = dcv(a + end * (b - a))
            if ve < val:
                t, val = end, ve
        return val, a + t * (b - a)

    span = hi_l - lo_l
    v_feas = float(best_q @ loss)

    def frontier(v_in, v_out):
        # bisection for the last feasible level between a feasible and an infeasible one
        while abs(v_out - v_in) > tol * span:
            mid = 0.5 * (v_in + v_out)
            if g(mid)[0] <= eps:
                v_in = mid
            else:
                v_out = mid
        return v_in, v_out

    top_ok = g(hi_l)[0] <= eps
    if top_ok:
        v_hi, v_hi_out = hi_l, hi_l
    else:
        v_hi, v_hi_out = frontier(v_feas, hi_l)
    if kappa == 0.0:
        q = g(v_hi)[1]
        return BruteForceResult(problem.wrap(v_hi), problem.wrap(v_hi), problem.wrap(v_hi_out),
                                q, count[0])
    if g(lo_l)[0] <= eps:
        v_lo = lo_l
    else:
        v_lo = frontier(v_feas, lo_l)[0]

    def penalized(v):
        gv = g(v)[0]
        return v - kappa * gv if gv <= eps else -math.inf

    v_best, f_best = _golden_max(penalized, v_lo, v_hi, tol=tol)
    if best_v > f_best:
        v_best, f_best = float(best_q @ loss), best_v
    upper = f_best + tol * span * (1.0 + kappa)
    return BruteForceResult(problem.wrap(f_best), problem.wrap(f_best), problem.wrap(upper),
                            g(v_best)[1], count[0])
