"""Desk-scale datasets: synthetic 2-D generators and an IDX reader.

All inputs are float64 in [0, 1]; labels are int64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np


class DatasetError(ValueError):
    """Base class for dataset loading failures."""


class IdxMagicError(DatasetError):
    pass


class IdxTruncatedError(DatasetError):
    pass


class IdxCountMismatchError(DatasetError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) == 0:
            raise DatasetError("dataset is empty")
        if len(self.inputs) != len(self.labels):
            raise DatasetError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.inputs.min() < 0 or self.inputs.max() > 1:
            raise DatasetError("inputs must lie in [0, 1]")
        if self.labels.min() < 0:
            raise DatasetError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.provenance.get("num_classes", self.labels.max() + 1))

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, n: int) -> "Dataset":
        return Dataset(self.inputs[:n], self.labels[:n], self.split, dict(self.provenance))


# Moons live in roughly [-1, 2] x [-0.5, 1]; one isotropic map keeps L-inf
# distances comparable along both axes.
_MOONS_OFFSET = np.array([1.0, 1.0])
_MOONS_SCALE = 1.0 / 3.0


def gen_two_moons(n: int, noise_sd: float = 0.1, seed: int = 0, split: str = "train") -> Dataset:
    """Two interleaved half circles, affinely mapped into the unit square.

    ``noise_sd`` is in the original (unmapped) moon units.
    """
    if n <= 0:
        raise DatasetError("n must be positive")
    rng = np.random.default_rng(seed)
    n_upper = n // 2
    n_lower = n - n_upper
    t_up = rng.uniform(0.0, np.pi, n_upper)
    t_lo = rng.uniform(0.0, np.pi, n_lower)
    upper = np.stack([np.cos(t_up), np.sin(t_up)], axis=1)
    lower = np.stack([1.0 - np.cos(t_lo), 0.5 - np.sin(t_lo)], axis=1)
    pts = np.concatenate([upper, lower])
    labels = np.concatenate([np.zeros(n_upper, dtype=np.int64), np.ones(n_lower, dtype=np.int64)])
    if noise_sd > 0:
        pts = pts + rng.normal(0.0, noise_sd, pts.shape)
    perm = rng.permutation(n)
    inputs = np.clip((pts[perm] + _MOONS_OFFSET) * _MOONS_SCALE, 0.0, 1.0)
    return Dataset(inputs, labels[perm], split,
                   {"kind": "moons", "n": n, "noise_sd": noise_sd, "seed": seed, "num_classes": 2})


def gen_gaussian_blobs(n: int, K: int = 3, sd: float = 0.05, seed: int = 0, split: str = "train",
                       radius: float = 0.3) -> Dataset:
    """``K`` isotropic clusters with centres evenly spaced on a circle around (0.5, 0.5)."""
    if n <= 0:
        raise DatasetError("n must be positive")
    if K < 2:
        raise DatasetError("need at least two classes")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(K) / K
    centres = 0.5 + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    labels = rng.integers(0, K, n)
    inputs = centres[labels]
    if sd > 0:
        inputs = inputs + rng.normal(0.0, sd, inputs.shape)
    return Dataset(np.clip(inputs, 0.0, 1.0), labels, split,
                   {"kind": "blobs", "n": n, "K": K, "sd": sd, "seed": seed, "num_classes": K})


# ---------------------------------------------------------------- IDX


def _read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the 4-byte magic")
    if raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise IdxMagicError(f"{path}: expected unsigned-byte IDX magic, got {raw[:3].hex()}")
    ndim = raw[3]
    if ndim < 1:
        raise IdxMagicError(f"{path}: IDX dimension count must be >= 1")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxTruncatedError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train", add_channel: bool = True) -> Dataset:
    """Read an IDX image/label pair; pixels are divided by 255.

    3-D image files (``N x H x W``) gain a channel axis so they feed conv layers directly.
    """
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if labels.ndim != 1:
        raise IdxMagicError(f"{labels_path}: label file must be 1-D, got {labels.ndim} dims")
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    inputs = images.astype(np.float64) / 255.0
    if add_channel and inputs.ndim == 3:
        inputs = inputs[:, None, :, :]
    return Dataset(inputs, labels.astype(np.int64), split,
                   {"kind": "idx", "images": str(images_path), "labels": str(labels_path)})


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (used for fixtures and round trips)."""
    arr = np.asarray(array, dtype=np.uint8)
    header = bytes([0, 0, 0x08, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())
