"""Datasets: IDX reader, synthetic generators and CSV round-tripping."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import BadMagicError, CountMismatchError, DataFormatError, TruncatedFileError

__all__ = [
    "Dataset",
    "load_idx",
    "gen_moons",
    "gen_binary",
    "write_csv",
    "read_csv",
    "DEFAULT_RULE",
    "split",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DEFAULT_RULE: Tuple[Tuple[int, ...], ...] = ((0, 1), (2, 3))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    domain: str = "box_continuous"
    lo: float = 0.0
    hi: float = 1.0
    num_classes: int = 2

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DataFormatError("features must be n x d with one label per row")
        if self.domain == "box_continuous":
            if np.any(self.features < self.lo) or np.any(self.features > self.hi):
                raise DataFormatError("features fall outside the declared box")
        elif self.domain == "binary_monotone":
            if np.any((self.features != 0) & (self.features != 1)):
                raise DataFormatError("binary domain requires 0/1 features")
        else:
            raise DataFormatError(f"unknown domain {self.domain!r}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataFormatError("labels outside [0, num_classes)")

    def __len__(self):
        return self.labels.size

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.domain, self.lo, self.hi,
                       self.num_classes)


def split(ds: Dataset, n_train: int) -> Tuple[Dataset, Dataset]:
    return ds.subset(slice(0, n_train)), ds.subset(slice(n_train, len(ds)))


def _read_header(data: bytes, fields: int, what: str):
    need = 4 * fields
    if len(data) < need:
        raise TruncatedFileError(f"{what}: header needs {need} bytes, file has {len(data)}")
    return struct.unpack(">" + "I" * fields, data[:need])


def load_idx(images_path, labels_path, limit: Optional[int] = None) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled by 1/255."""
    with open(images_path, "rb") as fh:
        img = fh.read()
    with open(labels_path, "rb") as fh:
        lab = fh.read()
    magic = _read_header(img, 1, "images")[0]
    if magic != IMAGE_MAGIC:
        raise BadMagicError(f"image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
    magic = _read_header(lab, 1, "labels")[0]
    if magic != LABEL_MAGIC:
        raise BadMagicError(f"label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")
    _, n_img, rows, cols = _read_header(img, 4, "images")
    _, n_lab = _read_header(lab, 2, "labels")
    if n_img != n_lab:
        raise CountMismatchError(f"{n_img} images but {n_lab} labels")
    d = rows * cols
    if len(img) < 16 + n_img * d:
        raise TruncatedFileError(f"image data holds {len(img) - 16} bytes, expected {n_img * d}")
    if len(lab) < 8 + n_lab:
        raise TruncatedFileError(f"label data holds {len(lab) - 8} bytes, expected {n_lab}")
    n = n_img if limit is None else min(n_img, int(limit))
    pixels = np.frombuffer(img, dtype=np.uint8, count=n * d, offset=16).reshape(n, d)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n, offset=8).astype(int)
    nc = max(10, int(labels.max()) + 1) if n else 10
    return Dataset(pixels.astype(float) / 255.0, labels, "box_continuous", 0.0, 1.0, nc)


# raw moons live in [-1, 2] x [-0.5, 1]; this affine map sends that box to [0, 1]^2
_MOON_SHIFT = np.array([1.0, 0.5])
_MOON_SCALE = np.array([3.0, 1.5])


def moon_arcs(t):
    """Noise-free points of both arcs (in the unit square) at angles ``t``."""
    outer = np.stack([np.cos(t), np.sin(t)], axis=1)
    inner = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    return (outer + _MOON_SHIFT) / _MOON_SCALE, (inner + _MOON_SHIFT) / _MOON_SCALE


def gen_moons(n: int, noise: float = 0.05, seed: int = 0) -> Dataset:
    """Two interleaved half circles rescaled into the unit square, shuffled."""
    if n < 2 or n % 2:
        raise ValueError("n must be an even number >= 2")
    rng = np.random.default_rng(seed)
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    outer, inner = moon_arcs(t)
    x = np.concatenate([outer, inner])
    if noise > 0:
        x = x + rng.normal(scale=noise, size=x.shape) / _MOON_SCALE
    x = np.clip(x, 0.0, 1.0)
    y = np.concatenate([np.zeros(half, int), np.ones(half, int)])
    perm = rng.permutation(n)
    return Dataset(x[perm], y[perm], "box_continuous", 0.0, 1.0, 2)


def _apply_rule(bits, rule):
    out = np.zeros(bits.shape[0], dtype=bool)
    for clause in rule:
        out |= np.all(bits[:, list(clause)] == 1, axis=1)
    return out


def gen_binary(n: int, d: int, planted_rule: Sequence[Sequence[int]] = DEFAULT_RULE,
               seed: int = 0, noise: float = 0.0) -> Dataset:
    """Uniform random bits labelled by an OR of AND-clauses, with label-flip noise."""
    if d < 4:
        raise ValueError("d must be at least 4")
    if any(not 0 <= j < d for clause in planted_rule for j in clause):
        raise ValueError("rule references a feature outside [0, d)")
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(n, d)).astype(float)
    y = _apply_rule(bits, planted_rule).astype(int)
    if noise > 0:
        flip = rng.random(n) < noise
        y = np.where(flip, 1 - y, y)
    return Dataset(bits, y, "binary_monotone", 0.0, 1.0, 2)


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(ds.dim)] + ["label"])
        for row, lab in zip(ds.features, ds.labels):
            w.writerow([format(v, ".17g") for v in row] + [int(lab)])


def read_csv(path, domain: str = "box_continuous", lo: float = 0.0, hi: float = 1.0,
             num_classes: Optional[int] = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError("empty CSV file")
    header = rows[0]
    d = len(header) - 1
    if header != [f"f{j}" for j in range(d)] + ["label"]:
        raise DataFormatError("CSV header must be f0..f{d-1},label")
    try:
        feats = np.array([[float(v) for v in r[:d]] for r in rows[1:]], dtype=float).reshape(-1, d)
        labels = np.array([int(r[d]) for r in rows[1:]], dtype=int)
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"malformed CSV row: {exc}") from exc
    nc = num_classes if num_classes is not None else max(2, int(labels.max()) + 1 if labels.size else 2)
    return Dataset(feats, labels, domain, lo, hi, nc)
