"""L-infinity PGD attacks with pluggable objectives, plus SPSA.

Step rule::

    x_{t+1} = clip_[0,1]( clip_{x, eps}( x_t + eta * sign(grad_x L) ) )

Random restarts draw their uniform start from ``seed + r``.  Per example the
kept candidate is a misclassified one if any restart found it, otherwise the
one with the highest objective; ties go to the earlier restart.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from . import losses as L
from . import tensor as T
from .losses import LossKind, LossTag
from .model import Network, cos_theta, predict
from .report import ExperimentReport
from .tensor import Tensor

DEFAULT_EPSILON = 8.0 / 255.0
# Gradient components this far below the example's largest one are rounding noise.
SIGN_RTOL = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = DEFAULT_EPSILON
    eta: Optional[float] = None  # None -> epsilon / 4
    steps: int = 20
    restarts: int = 1
    loss: LossKind = field(default_factory=LossKind)
    seed: int = 0
    input_bounds: tuple = (0.0, 1.0)
    clip_init: bool = True
    batch_size: int = 1024
    name: Optional[str] = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.step_size < 0:
            raise ValueError("eta must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    @property
    def step_size(self) -> float:
        return self.epsilon / 4.0 if self.eta is None else self.eta

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return {
            LossTag.CE: "PGD",
            LossTag.CW: "PGDCW",
            LossTag.DLR: "PGDLR",
            LossTag.SI_CE: "SI-PGD",
        }.get(self.loss.tag, f"PGD-{self.loss.tag.value}")


@dataclass(frozen=True)
class SpsaConfig:
    epsilon: float = DEFAULT_EPSILON
    iterations: int = 100
    samples: int = 128
    delta: float = 0.001
    learning_rate: float = 0.01
    loss: LossKind = field(default_factory=lambda: LossKind(LossTag.CW))
    seed: int = 0
    early_stop: bool = True
    input_bounds: tuple = (0.0, 1.0)
    batch_size: int = 64
    name: Optional[str] = None

    def __post_init__(self):
        if self.samples < 2 or self.samples % 2:
            raise ValueError("SPSA sample count must be even and >= 2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    @property
    def restarts(self) -> int:
        return 1

    @property
    def steps(self) -> int:
        return self.iterations

    @property
    def label(self) -> str:
        return self.name or "SPSA"


@dataclass
class AttackResult:
    x_adv: np.ndarray
    success: np.ndarray
    loss: np.ndarray
    trace: List[dict] = field(default_factory=list)

    @property
    def robust_accuracy(self) -> float:
        return float(1.0 - self.success.mean())


# ---------------------------------------------------------------- objectives


def attack_objective(net: Network, x_adv, y: np.ndarray, kind: LossKind,
                     clean_probs: Optional[np.ndarray] = None) -> Tensor:
    """Per-example objective the attacker ascends."""
    z, logits = net.forward(x_adv)
    tag = kind.tag
    if tag == LossTag.CE:
        return L.ce_logits(logits, y, reduction="none")
    if tag in (LossTag.SI_CE, LossTag.SI_CE_MARGIN):
        cos = cos_theta(z, Tensor(net.W))
        if tag == LossTag.SI_CE:
            return L.si_ce(cos, y, kind.s, reduction="none")
        return L.si_ce_margin(cos, y, kind.s, kind.m, reduction="none")
    if tag == LossTag.KL:
        if clean_probs is None:
            raise ValueError("KL objective needs the clean-point probabilities")
        return L.kl_div(Tensor(clean_probs), T.softmax(logits), reduction="none")
    scores = logits if kind.on_logits else T.softmax(logits)
    if tag == LossTag.CW:
        return L.cw_loss(scores, y, reduction="none")
    if tag == LossTag.DLR:
        return L.dlr_loss(scores, y, reduction="none")
    if tag == LossTag.BCE_MART:
        return L.bce_mart(T.softmax(logits), y, reduction="none")
    raise ValueError(f"unsupported attack objective {tag}")


def _clean_probs_if_needed(net: Network, x: np.ndarray, kind: LossKind) -> Optional[np.ndarray]:
    if kind.tag != LossTag.KL:
        return None
    return T.softmax(Tensor(net.logits(x))).data


def input_gradient(net: Network, x_adv: np.ndarray, y: np.ndarray, kind: LossKind,
                   clean_probs: Optional[np.ndarray] = None):
    """Per-example objective values and the gradient of their sum w.r.t. ``x_adv``."""
    leaf = Tensor(x_adv, requires_grad=True)
    per = attack_objective(net, leaf, y, kind, clean_probs)
    T.backward(T.tsum(per))
    grad = leaf.grad if leaf.grad is not None else np.zeros_like(x_adv)
    return per.data, grad


def project(x_adv: np.ndarray, x: np.ndarray, epsilon: float, bounds=(0.0, 1.0)) -> np.ndarray:
    out = np.clip(x_adv, x - epsilon, x + epsilon)
    return np.clip(out, bounds[0], bounds[1])


def robust_sign(grad: np.ndarray) -> np.ndarray:
    """``sign`` with components at rounding-noise level (relative to their example) set to 0."""
    scale = np.abs(grad).reshape(len(grad), -1).max(axis=1)
    scale = scale.reshape((-1,) + (1,) * (grad.ndim - 1))
    return np.where(np.abs(grad) > SIGN_RTOL * scale, np.sign(grad), 0.0)


def pgd_step(net: Network, x_t: np.ndarray, x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
             clean_probs: Optional[np.ndarray] = None) -> np.ndarray:
    """One signed-gradient ascent step followed by projection."""
    if cfg.loss.tag == LossTag.KL and clean_probs is None:
        clean_probs = _clean_probs_if_needed(net, x, cfg.loss)
    _, grad = input_gradient(net, x_t, y, cfg.loss, clean_probs)
    return project(x_t + cfg.step_size * robust_sign(grad), x, cfg.epsilon, cfg.input_bounds)


# ---------------------------------------------------------------- PGD family


def _objective_values(net, x_adv, y, kind, clean_probs):
    return attack_objective(net, Tensor(x_adv), y, kind, clean_probs).data


def _attack_chunk(net: Network, x: np.ndarray, y: np.ndarray, cfg: AttackConfig,
                  starts: Sequence[np.ndarray]):
    clean_probs = _clean_probs_if_needed(net, x, cfg.loss)
    best_x = None
    best_loss = None
    best_wrong = None
    trace = []
    for r, start in enumerate(starts):
        x_adv = start
        for _ in range(cfg.steps):
            x_adv = pgd_step(net, x_adv, x, y, cfg, clean_probs)
        loss = _objective_values(net, x_adv, y, cfg.loss, clean_probs)
        wrong = predict(net, x_adv) != y
        if best_x is None:
            best_x, best_loss, best_wrong = x_adv.copy(), loss.copy(), wrong.copy()
        else:
            take = (wrong & ~best_wrong) | ((wrong == best_wrong) & (loss > best_loss))
            best_x[take] = x_adv[take]
            best_loss[take] = loss[take]
            best_wrong[take] = wrong[take]
        trace.append({"restart": r, "wrong": wrong.copy(), "loss": loss.copy()})
    return best_x, best_wrong, best_loss, trace


def run_attack(net: Network, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> AttackResult:
    """PGD with ``cfg.restarts`` uniform random starts and per-example worst-case selection."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) != len(y):
        raise ValueError("x and y lengths differ")
    L._labels(y, net.num_classes)
    lo, hi = cfg.input_bounds
    starts = []
    for r in range(cfg.restarts):
        rng = np.random.default_rng(cfg.seed + r)
        x0 = x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape)
        if cfg.clip_init:
            x0 = np.clip(x0, lo, hi)
        starts.append(x0)

    xs, wrongs, losses_, traces = [], [], [], []
    for i in range(0, len(x), cfg.batch_size):
        sl = slice(i, i + cfg.batch_size)
        bx, bw, bl, tr = _attack_chunk(net, x[sl], y[sl], cfg, [s[sl] for s in starts])
        xs.append(bx)
        wrongs.append(bw)
        losses_.append(bl)
        traces.append(tr)

    trace = []
    for r in range(cfg.restarts):
        wrong = np.concatenate([t[r]["wrong"] for t in traces])
        loss = np.concatenate([t[r]["loss"] for t in traces])
        trace.append({"restart": r, "robust_accuracy": float(1.0 - wrong.mean()),
                      "mean_loss": float(loss.mean())})
    return AttackResult(np.concatenate(xs), np.concatenate(wrongs), np.concatenate(losses_), trace)


def si_pgd(net: Network, x: np.ndarray, y: np.ndarray, cfg: Optional[AttackConfig] = None,
           s: Optional[float] = None) -> AttackResult:
    """PGD on the cosine cross-entropy ``-log softmax(s * cos theta)_y``."""
    cfg = cfg or AttackConfig()
    scale = s if s is not None else (cfg.loss.s if cfg.loss.tag == LossTag.SI_CE else 15.0)
    cfg = replace(cfg, loss=LossKind(LossTag.SI_CE, s=scale, m=cfg.loss.m, on_logits=cfg.loss.on_logits))
    return run_attack(net, x, y, cfg)


# ---------------------------------------------------------------- SPSA


def _spsa_chunk(net: Network, x: np.ndarray, y: np.ndarray, cfg: SpsaConfig, rng) -> np.ndarray:
    lo, hi = cfg.input_bounds
    n = len(x)
    flat_dim = int(np.prod(x.shape[1:]))
    half = cfg.samples // 2
    x_adv = x.copy()
    done = predict(net, x_adv) != y if cfg.early_stop else np.zeros(n, dtype=bool)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    for it in range(1, cfg.iterations + 1):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        xa = x_adv[active]
        ya = y[active]
        signs = rng.choice(np.array([-1.0, 1.0]), size=(active.size, half, flat_dim))
        signs = signs.reshape((active.size, half) + x.shape[1:])
        probe = np.concatenate([xa[:, None] + cfg.delta * signs, xa[:, None] - cfg.delta * signs], axis=1)
        probe = probe.reshape((-1,) + x.shape[1:])
        yy = np.repeat(ya, 2 * half)
        vals = _objective_values(net, probe, yy, cfg.loss, None).reshape(active.size, 2 * half)
        diff = (vals[:, :half] - vals[:, half:]) / (2.0 * cfg.delta)
        grad = np.mean(diff.reshape(diff.shape + (1,) * (x.ndim - 1)) * signs, axis=1)
        m[active] = b1 * m[active] + (1 - b1) * grad
        v[active] = b2 * v[active] + (1 - b2) * grad * grad
        m_hat = m[active] / (1 - b1 ** it)
        v_hat = v[active] / (1 - b2 ** it)
        step = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
        x_adv[active] = project(xa + step, x[active], cfg.epsilon, (lo, hi))
        if cfg.early_stop:
            done[active] = predict(net, x_adv[active]) != ya
    return x_adv


def spsa_attack(net: Network, x: np.ndarray, y: np.ndarray, cfg: Optional[SpsaConfig] = None) -> AttackResult:
    """Gradient-free ascent with antithetic Rademacher finite differences and Adam updates.

    Only forward passes are used.  Examples stop moving once misclassified.
    """
    cfg = cfg or SpsaConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(cfg.seed)
    chunks = [_spsa_chunk(net, x[i:i + cfg.batch_size], y[i:i + cfg.batch_size], cfg, rng)
              for i in range(0, len(x), cfg.batch_size)]
    x_adv = np.concatenate(chunks)
    loss = _objective_values(net, x_adv, y, cfg.loss, None)
    success = predict(net, x_adv) != y
    return AttackResult(x_adv, success, loss)


# ---------------------------------------------------------------- suites


AnyAttack = Union[AttackConfig, SpsaConfig]


def attack(net: Network, x: np.ndarray, y: np.ndarray, cfg: AnyAttack) -> AttackResult:
    if isinstance(cfg, SpsaConfig):
        return spsa_attack(net, x, y, cfg)
    return run_attack(net, x, y, cfg)


SUITE_COLUMNS = ["attack", "loss", "epsilon", "steps", "restarts", "seed",
                 "clean_acc", "robust_acc", "mean_loss", "wall_time"]


def evaluate_suite(net: Network, dataset, configs: Sequence[AnyAttack],
                   metadata: Optional[dict] = None) -> ExperimentReport:
    """One row per attack config: clean and robust accuracy, mean final objective, wall time."""
    x, y = dataset.inputs, dataset.labels
    clean = float(np.mean(predict(net, x) == y))
    report = ExperimentReport(list(SUITE_COLUMNS), metadata=dict(metadata or {}))
    report.metadata["clean_acc"] = clean
    for cfg in configs:
        start = time.perf_counter()
        res = attack(net, x, y, cfg)
        report.add(attack=cfg.label, loss=cfg.loss.tag.value, epsilon=float(cfg.epsilon),
                   steps=int(cfg.steps), restarts=int(cfg.restarts), seed=int(cfg.seed),
                   clean_acc=clean, robust_acc=res.robust_accuracy,
                   mean_loss=float(res.loss.mean()), wall_time=time.perf_counter() - start)
    return report
