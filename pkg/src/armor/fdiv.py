"""Information divergences and their convex machinery.

A :class:`DivergenceSpec` names one of four divergences between probability
vectors:

``KL``
    ``f(z) = z log z``.
``Alpha(alpha)``
    ``f(z) = (z**alpha - 1) / (alpha (alpha - 1))`` for ``alpha > 1``.
``Indicator``
    ``D(q||p) = 0`` if ``q == p`` else ``+inf``; has no pointwise ``f``.
``BetaMix(base, beta)``
    ``f_beta(z) = beta f((z - 1 + beta) / beta)``, which interpolates between
    the base divergence (``beta = 1``) and the indicator-like limit
    ``beta -> 0``.

Infinity is represented by ``math.inf`` throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, UnsupportedOperationError

__all__ = [
    "DivergenceSpec",
    "KL",
    "Alpha",
    "Indicator",
    "BetaMix",
    "f_eval",
    "f_prime",
    "f_star",
    "f_star_prime",
    "d_f",
    "domain_lower",
    "needs_rho",
]

INDICATOR_TOL = 1e-12


@dataclass(frozen=True)
class DivergenceSpec:
    kind: str
    alpha: Optional[float] = None
    beta: Optional[float] = None
    base: Optional["DivergenceSpec"] = None
    tol: float = INDICATOR_TOL

    def __post_init__(self):
        if self.kind == "alpha":
            if self.alpha is None or not self.alpha > 1:
                raise ValueError(f"Alpha divergence requires alpha > 1, got {self.alpha}")
        elif self.kind == "betamix":
            if self.beta is None or not 0 < self.beta <= 1:
                raise ValueError(f"BetaMix requires 0 < beta <= 1, got {self.beta}")
            if self.base is None or self.base.kind not in ("kl", "alpha"):
                raise ValueError("BetaMix base must be KL or Alpha")
        elif self.kind not in ("kl", "indicator"):
            raise ValueError(f"unknown divergence kind {self.kind!r}")

    def __str__(self):
        if self.kind == "kl":
            return "KL"
        if self.kind == "alpha":
            return f"Alpha({self.alpha:g})"
        if self.kind == "indicator":
            return "Indicator"
        return f"BetaMix({self.base}, {self.beta:g})"

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "alpha":
            d["alpha"] = self.alpha
        elif self.kind == "betamix":
            d["beta"] = self.beta
            d["base"] = self.base.to_dict()
        elif self.kind == "indicator" and self.tol != INDICATOR_TOL:
            d["tol"] = self.tol
        return d

    @classmethod
    def from_dict(cls, d) -> "DivergenceSpec":
        if isinstance(d, str):
            d = {"kind": d}
        kind = str(d["kind"]).lower()
        if kind == "kl":
            return KL()
        if kind == "alpha":
            return Alpha(float(d["alpha"]))
        if kind == "indicator":
            return Indicator(float(d.get("tol", INDICATOR_TOL)))
        if kind == "betamix":
            return BetaMix(cls.from_dict(d["base"]), float(d["beta"]))
        raise ValueError(f"unknown divergence kind {d['kind']!r}")


def KL() -> DivergenceSpec:
    return DivergenceSpec("kl")


def Alpha(alpha: float) -> DivergenceSpec:
    return DivergenceSpec("alpha", alpha=float(alpha))


def Indicator(tol: float = INDICATOR_TOL) -> DivergenceSpec:
    return DivergenceSpec("indicator", tol=tol)


def BetaMix(base: DivergenceSpec, beta: float) -> DivergenceSpec:
    return DivergenceSpec("betamix", base=base, beta=float(beta))


def needs_rho(spec: DivergenceSpec) -> bool:
    """True when the dual objective carries the shift variable rho."""
    if spec.kind == "betamix":
        return spec.base.kind == "alpha"
    return spec.kind == "alpha"


def domain_lower(spec: DivergenceSpec) -> float:
    """Left end of the domain of ``f`` (likelihood ratios below it cost +inf)."""
    if spec.kind == "betamix":
        return 1.0 - spec.beta
    return 0.0


def _out(x, scalar):
    return float(x) if scalar else x


def _f_base(spec, z):
    # z is an ndarray; returns an ndarray with +inf outside the domain
    out = np.full(z.shape, math.inf)
    ok = z >= 0
    zz = z[ok]
    if spec.kind == "kl":
        with np.errstate(divide="ignore", invalid="ignore"):
            out[ok] = np.where(zz > 0, zz * np.log(np.where(zz > 0, zz, 1.0)), 0.0)
    else:
        a = spec.alpha
        out[ok] = (zz**a - 1.0) / (a * (a - 1.0))
    return out


def f_eval(spec: DivergenceSpec, z):
    """Evaluate the generator ``f`` of an f-divergence (``+inf`` off-domain)."""
    if spec.kind == "indicator":
        raise UnsupportedOperationError("the indicator divergence has no pointwise f")
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=float)
    if spec.kind == "betamix":
        b = spec.beta
        out = b * _f_base(spec.base, (z - 1.0 + b) / b)
    else:
        out = _f_base(spec, np.atleast_1d(z)).reshape(z.shape)
    return _out(out, scalar)


def f_prime(spec: DivergenceSpec, z):
    """Derivative of ``f``; ``-inf`` at the left end of the KL domain."""
    if spec.kind == "indicator":
        raise UnsupportedOperationError("the indicator divergence has no pointwise f")
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=float)
    if spec.kind == "betamix":
        return f_prime(spec.base, (z - 1.0 + spec.beta) / spec.beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.kind == "kl":
            out = np.log(z) + 1.0
        else:
            a = spec.alpha
            out = np.maximum(z, 0.0) ** (a - 1.0) / (a - 1.0)
    out = np.where(z < 0, np.nan, out)
    return _out(out, scalar)


def _star_base(spec, z, deriv):
    if spec.kind == "kl":
        # only reachable through BetaMix(KL, beta)
        return np.exp(z - 1.0)
    a = spec.alpha
    zp = np.maximum(z, 0.0)
    if deriv:
        return (a - 1.0) ** (1.0 / (a - 1.0)) * zp ** (1.0 / (a - 1.0))
    return (a - 1.0) ** (a / (a - 1.0)) / a * zp ** (a / (a - 1.0)) + 1.0 / (a * (a - 1.0))


def _check_star(spec):
    if spec.kind in ("kl", "indicator"):
        raise UnsupportedOperationError(
            f"Legendre transform for {spec} is handled by its closed-form dual"
        )


def f_star(spec: DivergenceSpec, z):
    """Legendre transform ``f*(z) = sup_x {z x - f(x)}`` for Alpha and BetaMix."""
    _check_star(spec)
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=float)
    if spec.kind == "betamix":
        b = spec.beta
        out = b * _star_base(spec.base, z, False) + (1.0 - b) * z
    else:
        out = _star_base(spec, z, False)
    return _out(out, scalar)


def f_star_prime(spec: DivergenceSpec, z):
    """Derivative of ``f*``; the right derivative at the Alpha kink ``z = 0``."""
    _check_star(spec)
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=float)
    if spec.kind == "betamix":
        b = spec.beta
        out = b * _star_base(spec.base, z, True) + (1.0 - b)
    else:
        out = _star_base(spec, z, True)
    return _out(out, scalar)


def d_f(spec: DivergenceSpec, q, p) -> float:
    """``D(q || p)`` between probability vectors, with ``0 f(0/0) = 0``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise DimensionError(f"length mismatch: {q.shape} vs {p.shape}")
    if spec.kind == "indicator":
        return 0.0 if np.all(np.abs(q - p) <= spec.tol) else math.inf
    supp = p > 0
    if np.any(q[~supp] > 0):
        return math.inf
    ratio = q[supp] / p[supp]
    vals = f_eval(spec, ratio)
    return float(np.sum(p[supp] * vals))
