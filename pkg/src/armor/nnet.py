"""A small multilayer perceptron with hand-written forward and backward passes.

Weights have shape ``(fan_in, fan_out)`` so a batch ``x`` of shape
``(n, fan_in)`` maps to ``x @ W + b``. Hidden layers use ReLU (subgradient 0
at 0); the last layer emits logits. Everything runs in float64.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DimensionError, DataFormatError

__all__ = [
    "MlpParams",
    "ForwardTrace",
    "init_mlp",
    "forward",
    "backward",
    "softmax",
    "log_softmax",
    "loss_ce",
    "loss_kl",
    "entropy",
    "ce_grad_logits",
    "softplus",
    "sigmoid",
    "save_params",
    "load_params",
]

CHECKPOINT_MAGIC = b"ARMORMLP"


@dataclass
class MlpParams:
    layers: List[Tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        for k, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and self.layers[k - 1][0].shape[1] != w.shape[0]:
                raise DimensionError(f"layer {k} input does not match the previous output")

    @property
    def in_dim(self):
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self):
        return self.layers[-1][0].shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def axpy(self, scale: float, grads: "MlpParams") -> "MlpParams":
        """``self + scale * grads`` as a new parameter set."""
        return MlpParams(
            [(w + scale * gw, b + scale * gb) for (w, b), (gw, gb) in zip(self.layers, grads.layers)]
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in self.layers)


@dataclass
class ForwardTrace:
    inputs: List[np.ndarray]
    pre: List[np.ndarray]


def init_mlp(sizes: Sequence[int], seed: int) -> MlpParams:
    """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` initialization."""
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((w, b))
    return MlpParams(layers)


def forward(params: MlpParams, x) -> Tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.in_dim:
        raise DimensionError(f"input dimension {h.shape[1]} != {params.in_dim}")
    inputs, pre = [], []
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
    return (h[0] if single else h), ForwardTrace(inputs, pre)


def backward(params: MlpParams, trace: ForwardTrace, loss_grad) -> Tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(loss_grad * logits)`` w.r.t. parameters and inputs."""
    g = np.asarray(loss_grad, dtype=float)
    single = g.ndim == 1
    if single:
        g = g[None, :]
    if g.shape != trace.pre[-1].shape:
        raise DimensionError(f"loss gradient {g.shape} does not match logits {trace.pre[-1].shape}")
    grads = [None] * len(params.layers)
    for k in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[k]
        if k != len(params.layers) - 1:
            g = g * (trace.pre[k] > 0.0)
        grads[k] = (trace.inputs[k].T @ g, g.sum(axis=0))
        g = g @ w.T
    return MlpParams(grads), (g[0] if single else g)


def log_softmax(logits):
    z = np.asarray(logits, dtype=float)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def _target_probs(target, n_classes, batch_shape):
    t = np.asarray(target)
    if t.shape == batch_shape and np.issubdtype(t.dtype, np.integer):
        if np.any(t < 0) or np.any(t >= n_classes):
            raise ValueError("class index out of range")
        return np.eye(n_classes)[t]
    t = np.asarray(target, dtype=float)
    if t.shape != batch_shape + (n_classes,):
        raise ValueError(f"target shape {t.shape} does not match logits")
    return t


def loss_ce(logits, target):
    """Cross entropy ``-sum target * log_softmax(logits)`` (per row for batches)."""
    logits = np.asarray(logits, dtype=float)
    probs = _target_probs(target, logits.shape[-1], logits.shape[:-1])
    out = -(probs * log_softmax(logits)).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def entropy(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = -terms.sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def loss_kl(logits, p_target):
    """``KL(p_target || softmax(logits))`` written as cross entropy minus entropy."""
    out = np.asarray(loss_ce(logits, p_target)) - np.asarray(entropy(p_target))
    return float(out) if out.ndim == 0 else out


def ce_grad_logits(logits, target):
    """Gradient of the cross entropy with respect to the logits."""
    logits = np.asarray(logits, dtype=float)
    probs = _target_probs(target, logits.shape[-1], logits.shape[:-1])
    return softmax(logits) * probs.sum(axis=-1, keepdims=True) - probs


def softplus(z):
    z = np.asarray(z, dtype=float)
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return float(out) if out.ndim == 0 else out


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return float(out) if out.ndim == 0 else out


def save_params(params: MlpParams, path) -> None:
    """Binary checkpoint: magic, layer count, shapes, then little-endian doubles."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(params.layers)))
        for w, _ in params.layers:
            fh.write(struct.pack("<II", *w.shape))
        for w, b in params.layers:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path) -> MlpParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise DataFormatError("not a parameter checkpoint (bad magic)")
    try:
        (count,) = struct.unpack_from("<I", data, 8)
        shapes = [struct.unpack_from("<II", data, 12 + 8 * k) for k in range(count)]
        offset = 12 + 8 * count
        layers = []
        for rows, cols in shapes:
            w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
            offset += 8 * rows * cols
            b = np.frombuffer(data, dtype="<f8", count=cols, offset=offset)
            offset += 8 * cols
            layers.append((w.astype(float), b.astype(float)))
    except (struct.error, ValueError) as exc:
        raise DataFormatError(f"truncated checkpoint: {exc}") from exc
    if offset != len(data):
        raise DataFormatError("checkpoint has trailing bytes")
    return MlpParams(layers)
