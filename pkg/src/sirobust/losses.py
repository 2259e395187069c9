"""Scalar objectives for attacks and adversarial training.

Each loss takes a ``[batch, K]`` tensor and integer labels and returns the
batch mean, or the per-example vector with ``reduction="none"``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOG_FLOOR = 1e-12
DLR_EPS = 1e-12


class LossTag(str, enum.Enum):
    CE = "CE"
    CW = "CW"
    DLR = "DLR"
    SI_CE = "SI_CE"
    SI_CE_MARGIN = "SI_CE_MARGIN"
    KL = "KL"
    BCE_MART = "BCE_MART"


@dataclass(frozen=True)
class LossKind:
    """Which objective to use, with the cosine scale ``s`` and margin ``m``.

    ``on_logits`` switches CW/DLR from softmax probabilities to raw logits.
    """

    tag: LossTag = LossTag.CE
    s: float = 15.0
    m: float = 0.2
    on_logits: bool = False

    def __post_init__(self):
        object.__setattr__(self, "tag", LossTag(self.tag))
        if self.tag in (LossTag.SI_CE, LossTag.SI_CE_MARGIN) and not self.s > 0:
            raise ValueError("scale s must be positive")
        if self.m < 0:
            raise ValueError("margin m must be non-negative")


def _labels(y, K: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    return y


def _reduce(per_example: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return T.mean(per_example)
    if reduction == "sum":
        return T.tsum(per_example)
    if reduction == "none":
        return per_example
    raise ValueError(f"unknown reduction {reduction!r}")


def _pick(t: Tensor, idx: np.ndarray) -> Tensor:
    return T.reshape(T.gather(t, idx[:, None]), (t.shape[0],))


def _floored_log(t: Tensor) -> Tensor:
    return T.log(T.clamp(t, lo=LOG_FLOOR))


def _best_other(values: np.ndarray, y: np.ndarray) -> np.ndarray:
    masked = values.copy()
    masked[np.arange(len(y)), y] = -np.inf
    return np.argmax(masked, axis=1)


def ce_logits(logits, y, reduction: str = "mean") -> Tensor:
    """Cross-entropy ``-g_y + log sum exp g``."""
    logits = T.as_tensor(logits)
    y = _labels(y, logits.shape[1])
    return _reduce(T.logsumexp(logits) - _pick(logits, y), reduction)


def cw_loss(probs, y, reduction: str = "mean") -> Tensor:
    """Margin ``-f_y + max_{i != y} f_i``; negative iff the example is correct."""
    probs = T.as_tensor(probs)
    if probs.shape[1] < 2:
        raise ValueError("CW loss needs K >= 2")
    y = _labels(y, probs.shape[1])
    other = _best_other(probs.data, y)
    return _reduce(_pick(probs, other) - _pick(probs, y), reduction)


def dlr_loss(probs, y, reduction: str = "mean") -> Tensor:
    """Difference-of-ratio loss ``-(f_y - max_{i!=y} f_i) / (f_pi1 - f_pi3 + eps)``."""
    probs = T.as_tensor(probs)
    if probs.shape[1] < 3:
        raise ValueError("DLR loss needs K >= 3")
    y = _labels(y, probs.shape[1])
    order = np.argsort(-probs.data, axis=1, kind="stable")
    other = _best_other(probs.data, y)
    margin = _pick(probs, y) - _pick(probs, other)
    spread = _pick(probs, order[:, 0]) - _pick(probs, order[:, 2]) + DLR_EPS
    return _reduce(-(margin / spread), reduction)


def si_ce(cos, y, s: float = 15.0, reduction: str = "mean") -> Tensor:
    """Cross-entropy over the scaled cosine logits ``s * cos(theta)``."""
    if not s > 0:
        raise ValueError("scale s must be positive")
    cos = T.as_tensor(cos)
    return ce_logits(cos * s, y, reduction)


def si_ce_margin(cos, y, s: float = 15.0, m: float = 0.2, reduction: str = "mean") -> Tensor:
    """Cosine-margin cross-entropy: the true-class cosine is lowered by ``m`` before scaling."""
    if not s > 0:
        raise ValueError("scale s must be positive")
    if m < 0:
        raise ValueError("margin m must be non-negative")
    cos = T.as_tensor(cos)
    y = _labels(y, cos.shape[1])
    if m == 0:
        return si_ce(cos, y, s, reduction)
    shift = np.zeros(cos.shape)
    shift[np.arange(len(y)), y] = m
    return ce_logits((cos - shift) * s, y, reduction)


def kl_div(p, q, reduction: str = "mean") -> Tensor:
    """Row-wise ``KL(p || q)`` with a floor inside the logs."""
    p, q = T.as_tensor(p), T.as_tensor(q)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    per = T.tsum(p * (_floored_log(p) - _floored_log(q)), axis=1)
    return _reduce(per, reduction)


def bce_mart(probs, y, reduction: str = "mean") -> Tensor:
    """Boosted cross-entropy ``-log f_y - log(1 - max_{k != y} f_k)``."""
    probs = T.as_tensor(probs)
    if probs.shape[1] < 2:
        raise ValueError("BCE needs K >= 2")
    y = _labels(y, probs.shape[1])
    other = _best_other(probs.data, y)
    per = -_floored_log(_pick(probs, y)) - _floored_log(1.0 - _pick(probs, other))
    return _reduce(per, reduction)


def saturation_bound(K: int, s: float) -> float:
    """Largest attainable ``softmax(s * cos)_y`` when every cosine lies in [-1, 1]."""
    return 1.0 / (1.0 + (K - 1) * np.exp(-2.0 * s))
