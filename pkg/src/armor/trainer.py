"""Adversarial training with transport-regularized divergence neighborhoods.

Each minibatch runs three phases in order: the inner maximizer builds
adversarial points for the current ``lam``; one gradient step updates the
dual variables ``(lam, rho)``; one SGD step updates the network using the
refreshed dual variables. ``lam = softplus(u)`` stays positive by
construction and is carried across minibatches.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .attacks import AttackConfig, run_attack
from .dataio import Dataset
from .errors import ArmorError, TrainingDivergedError
from .fdiv import BetaMix, DivergenceSpec, KL, f_star, f_star_prime
from .innermax import InnerConfig, adv_sample, adv_sample_label, transport_penalty
from .nnet import (
    MlpParams,
    backward,
    ce_grad_logits,
    entropy,
    forward,
    init_mlp,
    loss_ce,
    sigmoid,
    softplus,
)
from .transport import LabelCostSpec, SampleCostSpec, g_delta

__all__ = ["TrainConfig", "Metrics", "TrainLog", "train", "evaluate", "outer_terms"]


@dataclass(frozen=True)
class TrainConfig:
    method: str = "armor"  # "armor" or "erm"
    epochs: int = 10
    batch: int = 32
    hidden: Sequence[int] = (32, 32)
    divergence: DivergenceSpec = field(default_factory=KL)
    epsilon: float = 0.1
    cost: SampleCostSpec = field(default_factory=SampleCostSpec)
    label_cost: Optional[LabelCostSpec] = None
    adv_labels: bool = False
    inner: InnerConfig = field(default_factory=InnerConfig)
    lr_lambda: float = 2e-3
    lr_theta: float = 0.1
    lambda_init: float = 1.0
    t: Optional[float] = None
    s: Optional[float] = None
    robust_class: int = 1
    beta: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("armor", "erm"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.epochs < 0 or self.batch < 1:
            raise ValueError("epochs must be >= 0 and batch >= 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.t is not None and not 0 <= self.t <= 1:
            raise ValueError("t must lie in [0, 1]")
        if self.s is not None and not 0 < self.s < 1:
            raise ValueError("s must lie in (0, 1)")
        if self.beta is not None and not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.adv_labels and self.label_cost is None:
            raise ValueError("adversarial labels need a label cost (K, delta)")
        if not self.lambda_init > 0:
            raise ValueError("lambda_init must be positive")

    @property
    def effective_divergence(self) -> DivergenceSpec:
        if self.beta is None or self.divergence.kind in ("indicator", "betamix"):
            return self.divergence
        return BetaMix(self.divergence, self.beta)

    @property
    def inner_config(self) -> InnerConfig:
        return replace(self.inner, cost=self.cost, label_cost=self.label_cost)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["divergence"] = self.divergence.to_dict()
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class Metrics:
    accuracy: float
    fnr: float
    fpr: float
    n: int

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainLog:
    records: List[dict] = field(default_factory=list)

    def append(self, rec):
        self.records.append(rec)

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def outer_terms(spec: DivergenceSpec, A, lam: float, rho: float, eps: float):
    """Outer objective over one batch and its derivatives.

    Returns ``(value, dV/dA, dV/dlam at fixed A, dV/drho)`` for
    ``V = eps*lam + lam * Psi(A)`` (KL, indicator) or
    ``V = eps*lam + rho + lam * mean f*(A - rho/lam)`` (Alpha-type).
    """
    A = np.asarray(A, dtype=float)
    n = A.size
    kl_like = spec.kind == "kl" or (spec.kind == "betamix" and spec.base.kind == "kl")
    if spec.kind == "indicator":
        mean = float(A.mean())
        return eps * lam + lam * mean, np.full(n, lam / n), eps + mean, 0.0
    if kl_like:
        beta = spec.beta if spec.kind == "betamix" else 1.0
        m = float(A.max())
        e = np.exp(A - m)
        lme = m + math.log(e.mean())
        mean = float(A.mean())
        soft = e / e.sum()
        val = eps * lam + lam * (beta * lme + (1.0 - beta) * mean)
        dA = lam * (beta * soft + (1.0 - beta) / n)
        return val, dA, eps + beta * lme + (1.0 - beta) * mean, 0.0
    z = A - rho / lam
    fs = f_star(spec, z)
    fsp = f_star_prime(spec, z)
    val = eps * lam + rho + lam * float(fs.mean())
    dA = lam * fsp / n
    dlam = eps + float(fs.mean()) + (rho / lam) * float(fsp.mean())
    drho = 1.0 - float(fsp.mean())
    return val, dA, dlam, drho


def _needs_rho(spec):
    return spec.kind == "alpha" or (spec.kind == "betamix" and spec.base.kind == "alpha")


def _ce_and_grads(params, x, target, coef):
    """Per-sample cross entropies and the gradient of ``sum coef_i CE_i``."""
    logits, trace = forward(params, x)
    ce = loss_ce(logits, target)
    grads, _ = backward(params, trace, ce_grad_logits(logits, target) * coef[:, None])
    return ce, grads


def _zeros_like(params):
    return MlpParams([(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers])


def _add(a, b):
    return MlpParams([(wa + wb, ba + bb) for (wa, ba), (wb, bb) in zip(a.layers, b.layers)])


def train(dataset: Dataset, config: TrainConfig, log_path=None):
    """Run the training loop; returns ``(params, TrainLog)``."""
    inner = config.inner_config
    if config.method == "armor" and inner.domain != dataset.domain:
        raise ArmorError(f"inner domain {inner.domain} does not match data domain {dataset.domain}")
    spec = config.effective_divergence
    rng = np.random.default_rng(config.seed)
    sizes = [dataset.dim, *config.hidden, dataset.num_classes]
    params = init_mlp(sizes, seed=config.seed)
    u = math.log(math.expm1(config.lambda_init))
    rho = 0.0
    log = TrainLog()
    nc = dataset.num_classes
    eps = config.epsilon
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for bi, start in enumerate(range(0, n, config.batch)):
            idx = order[start : start + config.batch]
            x, y = dataset.features[idx], dataset.labels[idx]
            last_good = params.copy()
            rec = {"epoch": epoch, "batch": bi}
            if config.method == "erm":
                coef = np.full(len(idx), 1.0 / len(idx))
                ce, grads = _ce_and_grads(params, x, y, coef)
                objective = float(ce.mean())
                lam = softplus(u)
                rec.update(objective=objective, **{"lambda": lam, "rho": None})
            else:
                objective, grads, u, rho, extra = _armor_step(
                    params, x, y, u, rho, spec, eps, inner, config, nc
                )
                rec.update(extra)
                rec["objective"] = objective
            if not math.isfinite(objective):
                raise TrainingDivergedError(
                    f"objective became {objective} at epoch {epoch}, batch {bi}", last_good, log
                )
            params = params.axpy(-config.lr_theta, grads)
            if not params.all_finite():
                raise TrainingDivergedError("parameters became non-finite", last_good, log)
            log.append(rec)
    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write(log.to_ndjson())
    return params, log


def _armor_step(params, x, y, u, rho, spec, eps, inner, config, nc):
    lam = softplus(u)
    robust = np.ones(len(y), dtype=bool)
    if config.s is not None:
        robust = y == config.robust_class
    xr, yr = x[robust], y[robust]
    extra = {"n_adv": int(robust.sum())}

    # inner maximization on the robustified samples only
    target_r = yr
    if xr.shape[0]:
        if config.adv_labels:
            xt, pt, _ = adv_sample_label(xr, yr, params, lam, inner)
            target_r = pt
        else:
            xt, _ = adv_sample(xr, yr, params, lam, inner)
        if inner.domain == "binary_monotone":
            extra["violations"] = int(np.sum(xt < xr))
    else:
        xt = xr

    def robust_A(lam_now):
        logits, _ = forward(params, xt)
        base = loss_ce(logits, target_r)
        if config.adv_labels:
            base = base - entropy(target_r)
        pen = transport_penalty(inner.cost, xt - xr)
        if config.adv_labels:
            lc = inner.label_cost
            pk = target_r[np.arange(len(yr)), yr]
            pen = pen + lc.K * g_delta(lc, np.clip(1.0 - pk, 0.0, None))
        return base, base / lam_now - pen

    t = config.t
    s = config.s
    robust_weight = (1.0 - t if t is not None else 1.0) * (s if s is not None else 1.0)

    if xr.shape[0]:
        base, A = robust_A(lam)
        _, dA, dlam_fixed, drho = outer_terms(spec, A, lam, rho, eps)
        dlam = dlam_fixed + float(dA @ (-base / lam**2))
        u = u - config.lr_lambda * robust_weight * dlam * sigmoid(u)
        if _needs_rho(spec):
            rho = rho - config.lr_lambda * robust_weight * drho
        lam = softplus(u)
        base, A = robust_A(lam)
        val, dA, _, _ = outer_terms(spec, A, lam, rho, eps)
        coef = robust_weight * dA / lam
        extra["max_weight"] = float((dA / lam).max())
        extra["min_weight"] = float((dA / lam).min())
    else:
        val = 0.0
        coef = np.zeros(0)

    grads = _zeros_like(params)
    objective = robust_weight * val
    if xr.shape[0]:
        _, g_rob = _ce_and_grads(params, xt, target_r, coef)
        grads = _add(grads, g_rob)

    # natural-sample terms of the mixed and asymmetric variants
    nat_parts = []
    if s is not None:
        mask0 = ~robust
        if mask0.any():
            nat_parts.append((mask0, 1.0 - s))
        if t is not None and robust.any():
            nat_parts.append((robust, t * s))
    elif t is not None:
        nat_parts.append((np.ones(len(y), dtype=bool), t))
    for mask, weight in nat_parts:
        if weight == 0.0:
            continue
        k = int(mask.sum())
        ce, g_nat = _ce_and_grads(params, x[mask], y[mask], np.full(k, weight / k))
        objective += weight * float(ce.mean())
        grads = _add(grads, g_nat)
    extra.update({"lambda": lam, "rho": rho if _needs_rho(spec) else None})
    return objective, grads, u, rho, extra


def predict(params: MlpParams, x):
    logits, _ = forward(params, np.atleast_2d(x))
    return np.argmax(logits, axis=1)


def evaluate(params: MlpParams, dataset: Dataset, attack: Optional[AttackConfig] = None) -> Metrics:
    """Accuracy, FNR and FPR (positive class 1; macro one-vs-rest when multiclass)."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    x, y = dataset.features, dataset.labels
    if attack is not None:
        x = run_attack(params, x, y, attack)
    pred = predict(params, x)
    acc = float(np.mean(pred == y))
    classes = [1] if dataset.num_classes == 2 else list(range(dataset.num_classes))
    fnrs, fprs = [], []
    for c in classes:
        pos, neg = y == c, y != c
        fnrs.append(float(np.mean(pred[pos] != c)) if pos.any() else 0.0)
        fprs.append(float(np.mean(pred[neg] == c)) if neg.any() else 0.0)
    return Metrics(acc, float(np.mean(fnrs)), float(np.mean(fprs)), int(len(y)))
