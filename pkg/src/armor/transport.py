"""Finite-space optimal transport and the cost functions used for robustness.

Cost matrices are plain ``float`` arrays in which forbidden moves carry
``math.inf``. Infinite cells are never handed to arithmetic: the transport LP
only creates variables for finite cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DimensionError, InfeasibleMarginalsError

__all__ = [
    "SampleCostSpec",
    "LabelCostSpec",
    "BallCostSpec",
    "check_probvec",
    "ot_cost",
    "label_ot",
    "g_delta",
    "g_delta_prime",
    "norm_of",
    "build_sample_cost",
    "build_ball_cost",
    "scale_cost",
]

NORMS = ("l1", "l2", "linf")
MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class SampleCostSpec:
    L: float = 1.0
    q: float = 2.0
    norm: str = "l2"

    def __post_init__(self):
        if not self.L > 0 or not self.q > 0:
            raise ValueError("L and q must be positive")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")


@dataclass(frozen=True)
class LabelCostSpec:
    K: float = 1.0
    delta: float = 0.1

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if not 0 < self.delta <= 0.5:
            raise ValueError("delta must lie in (0, 1/2]")


@dataclass(frozen=True)
class BallCostSpec:
    radius: float
    metric: str = "l2"

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("radius must be nonnegative")
        if self.metric not in NORMS:
            raise ValueError(f"metric must be one of {NORMS}")


def check_probvec(p, name="p", tol=MARGINAL_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DimensionError(f"{name} must be a non-empty vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise ValueError(f"{name} is not a probability vector")
    return p


def ot_cost(c, mu, nu):
    """Exact transport cost ``min <c, pi>`` over couplings of ``mu`` and ``nu``.

    Returns ``(value, plan)``; ``(inf, None)`` when every coupling touches an
    infinite cell.
    """
    c = np.asarray(c, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if c.ndim != 2 or c.shape != (mu.size, nu.size):
        raise DimensionError(f"cost {c.shape} does not match marginals ({mu.size}, {nu.size})")
    if np.any(mu < 0) or np.any(nu < 0):
        raise ValueError("marginals must be nonnegative")
    if abs(mu.sum() - nu.sum()) > MARGINAL_TOL:
        raise InfeasibleMarginalsError(f"marginal masses differ: {mu.sum()!r} vs {nu.sum()!r}")
    n, m = c.shape
    rows = np.flatnonzero(mu > 0)
    cols = np.flatnonzero(nu > 0)
    sub = c[np.ix_(rows, cols)]
    ii, jj = np.nonzero(np.isfinite(sub))
    if ii.size == 0:
        return math.inf, None
    k = ii.size
    a_eq = np.zeros((rows.size + cols.size, k))
    a_eq[ii, np.arange(k)] = 1.0
    a_eq[rows.size + jj, np.arange(k)] = 1.0
    b_eq = np.concatenate([mu[rows], nu[cols]])
    res = linprog(
        sub[ii, jj],
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        return math.inf, None
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.zeros((n, m))
    plan[rows[ii], cols[jj]] = np.maximum(res.x, 0.0)
    return float(np.dot(sub[ii, jj], res.x)), plan


def label_ot(p, pt) -> float:
    """Transport cost between label distributions under the 0/1 cost."""
    p = np.asarray(p, dtype=float)
    pt = np.asarray(pt, dtype=float)
    if p.shape != pt.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {pt.shape}")
    return float(min(1.0, max(0.0, 1.0 - np.minimum(p, pt).sum())))


def g_delta(spec: LabelCostSpec, z):
    """Barrier ``z / (1 - z/delta)`` on ``[0, delta)``, ``+inf`` beyond."""
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("g_delta is defined for z >= 0")
    d = spec.delta
    with np.errstate(divide="ignore"):
        out = np.where(z < d, z / (1.0 - np.minimum(z, d) / d), math.inf)
    return float(out) if scalar else out


def g_delta_prime(spec: LabelCostSpec, z):
    d = spec.delta
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(z < d, 1.0 / (1.0 - np.minimum(z, d) / d) ** 2, math.inf)
    return float(out) if out.ndim == 0 else out


def norm_of(v, norm: str, axis=-1):
    v = np.asarray(v, dtype=float)
    if norm == "l1":
        return np.abs(v).sum(axis=axis)
    if norm == "l2":
        return np.sqrt((v * v).sum(axis=axis))
    if norm == "linf":
        return np.abs(v).max(axis=axis)
    raise ValueError(f"unknown norm {norm!r}")


def _as_points(xs):
    xs = np.asarray(xs, dtype=float)
    return xs.reshape(-1, 1) if xs.ndim == 1 else xs


def _pairwise_dist(xs, ys, norm):
    xs, ys = _as_points(xs), _as_points(ys)
    if xs.shape[1] != ys.shape[1]:
        raise DimensionError(f"point dimensions differ: {xs.shape[1]} vs {ys.shape[1]}")
    return norm_of(xs[:, None, :] - ys[None, :, :], norm)


def build_sample_cost(spec: SampleCostSpec, xs, ys, labels_equal=None) -> np.ndarray:
    """``L ||x_i - y_j||^q`` where labels agree, ``+inf`` where they differ."""
    dist = _pairwise_dist(xs, ys, spec.norm)
    cost = spec.L * dist**spec.q
    if labels_equal is not None:
        mask = np.asarray(labels_equal, dtype=bool)
        if mask.shape != cost.shape:
            raise DimensionError(f"label mask {mask.shape} does not match cost {cost.shape}")
        cost = np.where(mask, cost, math.inf)
    return cost


def build_ball_cost(spec: BallCostSpec, xs, ys) -> np.ndarray:
    """0 inside the closed ball of ``spec.radius``, ``+inf`` outside."""
    dist = _pairwise_dist(xs, ys, spec.metric)
    return np.where(dist <= spec.radius, 0.0, math.inf)


def scale_cost(c, r: float) -> np.ndarray:
    if not r > 0:
        raise ValueError("scale r must be positive")
    c = np.asarray(c, dtype=float)
    # keeps inf cells inf and zero cells zero
    return np.where(np.isfinite(c), c * r, math.inf)
