"""AT / TRADES / ALP / MART adversarial training, each optionally with the SI mechanism.

With ``si=True`` the inner maximisation switches to the cosine cross-entropy
attack and the outer objective gains ``beta * si_ce_margin(cos theta(x_adv))``.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import losses as L
from . import tensor as T
from .attacks import AttackConfig, AttackResult, run_attack
from .losses import LossKind, LossTag
from .model import Checkpoint, Network, cos_theta, predict
from .report import ExperimentReport, config_hash
from .tensor import Tensor

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    AT = "AT"
    TRADES = "TRADES"
    ALP = "ALP"
    MART = "MART"


DEFAULT_LAMBDA = {Method.AT: 0.0, Method.TRADES: 6.0, Method.ALP: 3.0, Method.MART: 6.0}


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 50
    milestones: Tuple[int, ...] = (30, 40)
    batch_size: int = 128

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: divided by 10 at each milestone reached."""
        drops = sum(1 for m in self.milestones if epoch >= m)
        return self.lr * (0.1 ** drops)

    @classmethod
    def resnet_schedule(cls) -> "OptimizerConfig":
        return cls(lr=0.01, momentum=0.9, weight_decay=5e-4, epochs=120, milestones=(75, 90, 100))


def _default_inner() -> AttackConfig:
    return AttackConfig(steps=10)


@dataclass(frozen=True)
class DefenseConfig:
    method: Method = Method.AT
    si: bool = False
    beta: float = 0.2
    lam: Optional[float] = None  # None -> per-method default
    alp_mix: float = 0.5
    s: float = 15.0
    m: float = 0.2
    inner_attack: AttackConfig = field(default_factory=_default_inner)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    mart_detach_weight: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0.0 <= self.alp_mix <= 1.0:
            raise ValueError("ALP mix weight must lie in [0, 1]")
        if not self.s > 0 or self.m < 0:
            raise ValueError("need s > 0 and m >= 0")

    @property
    def weight(self) -> float:
        return DEFAULT_LAMBDA[self.method] if self.lam is None else self.lam

    @property
    def name(self) -> str:
        return f"{self.method.value}-SI" if self.si else self.method.value

    def adversarial_loss(self) -> LossKind:
        """Inner-maximisation objective for this row of the method table."""
        if self.si:
            return LossKind(LossTag.SI_CE, s=self.s, m=self.m)
        if self.method == Method.TRADES:
            return LossKind(LossTag.KL)
        return LossKind(LossTag.CE)


# ---------------------------------------------------------------- objectives


def inner_maximize(net: Network, x: np.ndarray, y: np.ndarray, cfg: DefenseConfig,
                   seed: Optional[int] = None) -> np.ndarray:
    """Adversarial batch for the outer step (TRADES without SI ascends KL against detached f(x))."""
    attack_cfg = replace(cfg.inner_attack, loss=cfg.adversarial_loss())
    if seed is not None:
        attack_cfg = replace(attack_cfg, seed=seed)
    if attack_cfg.epsilon == 0:
        return np.asarray(x, dtype=np.float64).copy()
    return run_attack(net, x, y, attack_cfg).x_adv


def alp_pairing_term(W, z, z_adv, reduction: str = "mean") -> Tensor:
    """Mean over the batch of ``||W^T (z - z_adv)||_2``; the bias cancels."""
    W, z, z_adv = T.as_tensor(W), T.as_tensor(z), T.as_tensor(z_adv)
    if z.shape != z_adv.shape:
        raise ValueError(f"feature shapes differ: {z.shape} vs {z_adv.shape}")
    per = T.norm(T.matmul(z - z_adv, W), axis=1)
    return T.mean(per) if reduction == "mean" else per


def training_objective(net: Network, x: np.ndarray, y: np.ndarray, x_adv: np.ndarray,
                       cfg: DefenseConfig, params: Optional[Dict[str, Tensor]] = None
                       ) -> Tuple[Tensor, Dict[str, float]]:
    """Outer-minimisation loss and its named terms (already weighted)."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise ValueError(f"clean batch {x.shape} and adversarial batch {x_adv.shape} differ")
    y = np.asarray(y, dtype=np.int64)
    if len(y) != len(x):
        raise ValueError("label count does not match batch size")
    p = params if params is not None else {k: Tensor(v) for k, v in net.params.items()}
    W = p["softmax.weight"]
    z_adv, logits_adv = net.forward(Tensor(x_adv), p)
    lam = cfg.weight
    terms: Dict[str, Tensor] = {}

    if cfg.method == Method.AT:
        terms["ce_adv"] = L.ce_logits(logits_adv, y)
    else:
        z, logits = net.forward(Tensor(x), p)
        if cfg.method == Method.TRADES:
            terms["ce_clean"] = L.ce_logits(logits, y)
            terms["kl"] = L.kl_div(T.softmax(logits), T.softmax(logits_adv)) * lam
        elif cfg.method == Method.ALP:
            a = cfg.alp_mix
            terms["ce_clean"] = L.ce_logits(logits, y) * a
            terms["ce_adv"] = L.ce_logits(logits_adv, y) * (1.0 - a)
            terms["pairing"] = alp_pairing_term(W, z, z_adv) * lam
        elif cfg.method == Method.MART:
            probs = T.softmax(logits)
            probs_adv = T.softmax(logits_adv)
            terms["bce_adv"] = L.bce_mart(probs_adv, y)
            true_p = T.reshape(T.gather(probs, y[:, None]), (len(y),))
            weight = Tensor(1.0 - true_p.data) if cfg.mart_detach_weight else 1.0 - true_p
            kl = L.kl_div(probs, probs_adv, reduction="none")
            terms["kl"] = T.mean(kl * weight) * lam

    if cfg.si:
        cos = cos_theta(z_adv, W)
        terms["si_reg"] = L.si_ce_margin(cos, y, cfg.s, cfg.m) * cfg.beta

    total = None
    for t in terms.values():
        total = t if total is None else total + t
    return total, {k: float(v.data) for k, v in terms.items()}


# ---------------------------------------------------------------- training loop


@dataclass
class TrainLog:
    records: List[dict] = field(default_factory=list)

    COLUMNS = ["epoch", "lr", "clean_acc", "robust_acc", "loss", "ce_clean", "ce_adv",
               "bce_adv", "kl", "pairing", "si_reg", "wall_time"]

    def append(self, record: dict) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def series(self, key: str) -> List[float]:
        return [r.get(key, 0.0) for r in self.records]

    def to_report(self, metadata: Optional[dict] = None) -> ExperimentReport:
        rep = ExperimentReport(list(self.COLUMNS), metadata=dict(metadata or {}))
        for r in self.records:
            rep.add(**{c: r.get(c, 0.0) for c in self.COLUMNS})
        return rep


class SGD:
    """Heavy-ball SGD with coupled L2 weight decay: ``v = mu v + (g + wd p); p -= lr v``."""

    def __init__(self, params: Dict[str, np.ndarray], momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> None:
        for k, p in params.items():
            g = grads[k] + self.weight_decay * p
            self.velocity[k] = self.momentum * self.velocity[k] + g
            params[k] = p - lr * self.velocity[k]


def _probe_robust_accuracy(net: Network, probe, cfg: DefenseConfig) -> float:
    pgd = replace(cfg.inner_attack, loss=LossKind(LossTag.CE), restarts=1, seed=cfg.seed)
    if pgd.epsilon == 0:
        return float(np.mean(predict(net, probe.inputs) == probe.labels))
    return run_attack(net, probe.inputs, probe.labels, pgd).robust_accuracy


def train(net: Network, dataset, cfg: DefenseConfig, probe=None,
          epochs: Optional[int] = None) -> Tuple[Checkpoint, TrainLog]:
    """Min-max training; returns the final checkpoint and a per-epoch log.

    The input network is left untouched.  ``probe`` (default: first 200 training
    points) is attacked with PGD from ``cfg.inner_attack`` after every epoch.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    net = net.copy()
    opt_cfg = cfg.optimizer
    n_epochs = opt_cfg.epochs if epochs is None else epochs
    probe = probe if probe is not None else dataset.subset(min(len(dataset), 200))
    rng = np.random.default_rng(cfg.seed)
    sgd = SGD(net.params, opt_cfg.momentum, opt_cfg.weight_decay)
    tlog = TrainLog()
    x_all, y_all = dataset.inputs, dataset.labels
    step = 0
    for epoch in range(n_epochs):
        start = time.perf_counter()
        lr = opt_cfg.lr_at(epoch)
        order = rng.permutation(len(y_all))
        sums: Dict[str, float] = {}
        count = 0
        for i in range(0, len(order), opt_cfg.batch_size):
            idx = order[i:i + opt_cfg.batch_size]
            x, y = x_all[idx], y_all[idx]
            x_adv = inner_maximize(net, x, y, cfg, seed=cfg.seed + 1000003 * (step + 1))
            leaves = net.param_leaves()
            loss, terms = training_objective(net, x, y, x_adv, cfg, leaves)
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, step {step}: {terms}")
            T.backward(loss)
            grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
            sgd.step(net.params, grads, lr)
            w = len(idx)
            sums["loss"] = sums.get("loss", 0.0) + float(loss.data) * w
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + v * w
            count += w
            step += 1
        record = {k: v / count for k, v in sums.items()}
        record.update(epoch=epoch, lr=lr,
                      clean_acc=float(np.mean(predict(net, probe.inputs) == probe.labels)),
                      robust_acc=_probe_robust_accuracy(net, probe, cfg),
                      wall_time=time.perf_counter() - start)
        tlog.append(record)
        log.info("epoch %d lr %.4g loss %.4f clean %.3f robust %.3f", epoch, lr,
                 record["loss"], record["clean_acc"], record["robust_acc"])
    ckpt = Checkpoint.from_network(net, epoch=n_epochs, config_hash=config_hash(cfg), seed=cfg.seed,
                                   defense=cfg.name)
    return ckpt, tlog
