"""White-box evaluation attacks: FGSM, PGD and a bit-flip FGSM for binary data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteGradientError
from .nnet import MlpParams, backward, ce_grad_logits, forward

__all__ = ["AttackConfig", "input_gradient", "fgsm", "pgd", "rfgsm_binary", "run_attack"]


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "pgd"
    eps_attack: float = 0.1
    steps: int = 40
    step_size: float = 0.01
    clamp_lo: float = 0.0
    clamp_hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd", "rfgsm"):
            raise ValueError(f"unknown attack {self.kind!r}")
        if self.eps_attack < 0:
            raise ValueError("eps_attack must be nonnegative")
        if self.kind in ("pgd", "rfgsm") and self.steps < 1:
            raise ValueError("iterative attacks need at least one step")


def input_gradient(model: MlpParams, x, y):
    """Gradient of the summed cross entropy with respect to the inputs."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    logits, trace = forward(model, x)
    _, gx = backward(model, trace, ce_grad_logits(logits, np.atleast_1d(y).astype(int)))
    if not np.all(np.isfinite(gx)):
        raise NonFiniteGradientError(0)
    return gx


def _shape_back(x, out):
    return out[0] if np.ndim(x) == 1 else out


def fgsm(model: MlpParams, x, y, cfg: AttackConfig):
    xb = np.atleast_2d(np.asarray(x, dtype=float))
    g = input_gradient(model, xb, y)
    out = np.clip(xb + cfg.eps_attack * np.sign(g), cfg.clamp_lo, cfg.clamp_hi)
    return _shape_back(x, out)


def pgd(model: MlpParams, x, y, cfg: AttackConfig):
    """Signed-gradient steps from ``x`` projected onto the l-inf ball and the box."""
    xb = np.atleast_2d(np.asarray(x, dtype=float))
    lo = np.maximum(xb - cfg.eps_attack, cfg.clamp_lo)
    hi = np.minimum(xb + cfg.eps_attack, cfg.clamp_hi)
    xa = xb.copy()
    for step in range(cfg.steps):
        try:
            g = input_gradient(model, xa, y)
        except NonFiniteGradientError as exc:
            raise NonFiniteGradientError(step) from exc
        xa = np.clip(xa + cfg.step_size * np.sign(g), lo, hi)
    return _shape_back(x, xa)


def rfgsm_binary(model: MlpParams, x_bits, y, cfg: AttackConfig):
    """Each round flips the 0-bit with the largest positive loss gradient."""
    xb = np.atleast_2d(np.asarray(x_bits, dtype=float))
    xa = xb.copy()
    rows = np.arange(xa.shape[0])
    for step in range(cfg.steps):
        try:
            g = input_gradient(model, xa, y)
        except NonFiniteGradientError as exc:
            raise NonFiniteGradientError(step) from exc
        score = np.where(xa < 0.5, g, -np.inf)
        j = np.argmax(score, axis=1)
        flip = score[rows, j] > 0
        xa[rows[flip], j[flip]] = 1.0
    return _shape_back(x_bits, xa)


def run_attack(model: MlpParams, x, y, cfg: AttackConfig):
    if cfg.kind == "fgsm":
        return fgsm(model, x, y, cfg)
    if cfg.kind == "pgd":
        return pgd(model, x, y, cfg)
    return rfgsm_binary(model, x, y, cfg)
