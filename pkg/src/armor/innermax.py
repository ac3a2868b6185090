"""Inner maximizers that build transport-regularized adversarial samples.

For a sample ``(x, y)`` the adversarial point maximizes

    A_s(x_t) = CE(model(x_t), y) / lam - L * ||x_t - x||^q

and, when labels may move as well, the adversarial pair ``(x_t, p_t)``
maximizes

    A_sl = (CE(model(x_t), p_t) - H(p_t)) / lam - L ||x_t - x||^q - K g(1 - p_t[k])

with ``p_t = softmax(y_t)``. All routines accept a single sample or a batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NonFiniteGradientError
from .nnet import MlpParams, backward, ce_grad_logits, entropy, forward, loss_ce, softmax
from .transport import LabelCostSpec, SampleCostSpec, g_delta, g_delta_prime, norm_of

__all__ = [
    "InnerConfig",
    "AdvLabelState",
    "transport_penalty",
    "transport_penalty_grad",
    "sample_objective",
    "label_objective",
    "initial_label_logits",
    "adv_sample",
    "adv_sample_label",
    "adv_binary_monotone",
]


@dataclass(frozen=True)
class InnerConfig:
    M: int = 10
    lr_x: float = 0.01
    lr_y: float = 0.01
    clamp_lo: float = 0.0
    clamp_hi: float = 1.0
    domain: str = "box_continuous"
    cost: SampleCostSpec = field(default_factory=SampleCostSpec)
    label_cost: Optional[LabelCostSpec] = None
    num_classes: int = 2
    binary_mode: str = "greedy"

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("M must be nonnegative")
        if self.domain not in ("box_continuous", "binary_monotone"):
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.binary_mode not in ("greedy", "relaxed"):
            raise ValueError(f"unknown binary mode {self.binary_mode!r}")
        if self.domain == "box_continuous" and not (
            math.isfinite(self.clamp_lo) and math.isfinite(self.clamp_hi) and self.clamp_lo < self.clamp_hi
        ):
            raise ValueError("box domains need finite clamp bounds with lo < hi")


@dataclass
class AdvLabelState:
    y_tilde: np.ndarray

    @property
    def p_tilde(self) -> np.ndarray:
        return softmax(self.y_tilde)


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _labels(y, n):
    y = np.atleast_1d(np.asarray(y))
    if y.size == 1 and n > 1:
        y = np.repeat(y, n)
    return y.astype(int)


def transport_penalty(spec: SampleCostSpec, v):
    """``L ||v||^q`` per row."""
    return spec.L * norm_of(v, spec.norm) ** spec.q


def transport_penalty_grad(spec: SampleCostSpec, v):
    """A subgradient of ``L ||v||^q`` per row (zero at ``v = 0``)."""
    v = np.asarray(v, dtype=float)
    nrm = norm_of(v, spec.norm)[..., None]
    if spec.norm == "l2":
        direction = np.divide(v, nrm, out=np.zeros_like(v), where=nrm > 0)
    elif spec.norm == "l1":
        direction = np.sign(v)
    else:
        idx = np.argmax(np.abs(v), axis=-1)
        direction = np.zeros_like(v)
        rows = np.arange(v.shape[0])
        direction[rows, idx] = np.sign(v[rows, idx])
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm > 0, spec.L * spec.q * nrm ** (spec.q - 1.0), 0.0)
    return scale * direction


def sample_objective(model: MlpParams, x, x_t, y, lam, cost: SampleCostSpec):
    xb, single = _batch(x)
    xt, _ = _batch(x_t)
    logits, _ = forward(model, xt)
    val = loss_ce(logits, _labels(y, xt.shape[0])) / lam - transport_penalty(cost, xt - xb)
    return float(val[0]) if single else val


def label_objective(model: MlpParams, x, x_t, y, y_t, lam, cfg: InnerConfig):
    xb, single = _batch(x)
    xt, _ = _batch(x_t)
    yt = np.atleast_2d(np.asarray(y_t, dtype=float))
    k = _labels(y, xt.shape[0])
    pt = softmax(yt)
    logits, _ = forward(model, xt)
    base = (loss_ce(logits, pt) - entropy(pt)) / lam
    lc = cfg.label_cost
    label_pen = lc.K * g_delta(lc, np.clip(1.0 - pt[np.arange(len(k)), k], 0.0, None))
    val = base - transport_penalty(cfg.cost, xt - xb) - label_pen
    return float(val[0]) if single else val


def _input_grad(model, xt, target, lam):
    logits, trace = forward(model, xt)
    _, gx = backward(model, trace, ce_grad_logits(logits, target) / lam)
    return gx


def _check(g, step):
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError(step)


def adv_sample(x, y_class, model: MlpParams, lam: float, cfg: InnerConfig):
    """Plain gradient ascent on ``A_s`` with clamping to the data box each step."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if cfg.domain == "binary_monotone":
        return adv_binary_monotone(x, y_class, model, lam, cfg)
    xb, single = _batch(x)
    y = _labels(y_class, xb.shape[0])
    xt = xb.copy()
    for step in range(cfg.M):
        g = _input_grad(model, xt, y, lam) - transport_penalty_grad(cfg.cost, xt - xb)
        _check(g, step)
        xt = np.clip(xt + cfg.lr_x * g, cfg.clamp_lo, cfg.clamp_hi)
    obj = sample_objective(model, xb, xt, y, lam, cfg.cost)
    return (xt[0], float(obj[0])) if single else (xt, obj)


def initial_label_logits(y_class, num_classes: int, delta: float) -> np.ndarray:
    """Logits putting mass ``1 - delta/2`` on the true class, the rest spread evenly."""
    y = np.atleast_1d(np.asarray(y_class, dtype=int))
    scale = math.log((num_classes - 1) * (2.0 - delta) / delta)
    return scale * np.eye(num_classes)[y]


def adv_sample_label(x, y_onehot_k, model: MlpParams, lam: float, cfg: InnerConfig):
    """Alternating ascent on sample and label logits (sample first, then label).

    Whenever the true-class probability drops to ``1 - delta`` or below, the
    label logits are reset to their initial value.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if cfg.label_cost is None:
        raise ValueError("adversarial labels need a label cost")
    lc = cfg.label_cost
    xb, single = _batch(x)
    k = _labels(y_onehot_k, xb.shape[0])
    n, nc = xb.shape[0], cfg.num_classes
    rows = np.arange(n)
    yt0 = initial_label_logits(k, nc, lc.delta)
    yt = yt0.copy()
    xt = xb.copy()
    binary = cfg.domain == "binary_monotone"
    for step in range(cfg.M):
        pt = softmax(yt)
        if binary:
            xt = _greedy_flip_round(model, xb, xt, pt, lam, cfg)
        else:
            g = _input_grad(model, xt, pt, lam) - transport_penalty_grad(cfg.cost, xt - xb)
            _check(g, step)
            xt = np.clip(xt + cfg.lr_x * g, cfg.clamp_lo, cfg.clamp_hi)
        logits, _ = forward(model, xt)
        logq = logits - logits.max(axis=1, keepdims=True)
        logq = logq - np.log(np.exp(logq).sum(axis=1, keepdims=True))
        with np.errstate(divide="ignore"):
            logp = np.log(pt)
        u = (-logq + logp + 1.0) / lam
        u[rows, k] += lc.K * g_delta_prime(lc, np.clip(1.0 - pt[rows, k], 0.0, None))
        gy = pt * (u - (pt * u).sum(axis=1, keepdims=True))
        _check(gy, step)
        yt = yt + cfg.lr_y * gy
        bad = softmax(yt)[rows, k] <= 1.0 - lc.delta
        yt[bad] = yt0[bad]
    obj = label_objective(model, xb, xt, k, yt, lam, cfg)
    pt = softmax(yt)
    if single:
        return xt[0], pt[0], float(obj[0])
    return xt, pt, obj


def _objective_batch(model, xb_rep, cand, target, lam, cost):
    logits, _ = forward(model, cand)
    return loss_ce(logits, target) / lam - transport_penalty(cost, cand - xb_rep)


def _greedy_flip_round(model, xb, xt, target, lam, cfg):
    """One greedy 0->1 flip per sample when it improves the objective."""
    out = xt.copy()
    relaxed = cfg.binary_mode == "relaxed"
    for i in range(xt.shape[0]):
        zeros = np.flatnonzero(xt[i] < 0.5)
        if zeros.size == 0:
            continue
        tgt = target[i : i + 1] if np.ndim(target) == 2 else np.atleast_1d(target[i])
        cur = _objective_batch(model, xb[i : i + 1], xt[i : i + 1], tgt, lam, cfg.cost)[0]
        if relaxed:
            g = _input_grad(model, xt[i : i + 1], tgt, lam)[0]
            g = g - transport_penalty_grad(cfg.cost, (xt[i] - xb[i])[None, :])[0]
            j = zeros[int(np.argmax(g[zeros]))]
            if g[j] <= 0:
                continue
            out[i, j] = 1.0
            continue
        cand = np.repeat(xt[i : i + 1], zeros.size, axis=0)
        cand[np.arange(zeros.size), zeros] = 1.0
        tgt_rep = np.repeat(tgt, zeros.size, axis=0)
        vals = _objective_batch(model, np.repeat(xb[i : i + 1], zeros.size, axis=0), cand,
                                tgt_rep, lam, cfg.cost)
        best = int(np.argmax(vals))
        if vals[best] > cur:
            out[i, zeros[best]] = 1.0
    return out


def adv_binary_monotone(x_bits, y_class, model: MlpParams, lam: float, cfg: InnerConfig):
    """Greedy coordinate ascent that may only switch bits from 0 to 1."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    xb, single = _batch(x_bits)
    if np.any((xb != 0) & (xb != 1)):
        raise ValueError("binary inputs must be 0/1")
    y = _labels(y_class, xb.shape[0])
    xt = xb.copy()
    for _ in range(cfg.M):
        nxt = _greedy_flip_round(model, xb, xt, y, lam, cfg)
        if np.array_equal(nxt, xt):
            break
        xt = nxt
    obj = sample_objective(model, xb, xt, y, lam, cfg.cost)
    return (xt[0], float(obj[0])) if single else (xt, obj)
