"""Diagnostic experiments behind the CLI: scale sweep, ablation grid, loss surfaces, cosine histogram."""

from __future__ import annotations

import itertools
from dataclasses import replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import losses as L
from .attacks import AttackConfig, run_attack
from .datasets import Dataset
from .defenses import DefenseConfig, train
from .losses import LossKind, LossTag
from .model import Network, cos_theta, mlp, predict, rescale_softmax_layer
from .report import ExperimentReport, config_hash
from .tensor import Tensor

DEFAULT_FACTORS = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)
S_GRID = (10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0)
M_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
BETA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
OPERATING_POINT = {"s": 15.0, "m": 0.2, "beta": 0.2}


def _clean_acc(net: Network, data: Dataset) -> float:
    return float(np.mean(predict(net, data.inputs) == data.labels))


def cmd_sweep_scale(net: Network, data: Dataset, factors: Sequence[float] = DEFAULT_FACTORS,
                    epsilon: float = 8 / 255, steps: int = 20, seed: int = 0) -> ExperimentReport:
    """Robust accuracy under PGD and SI-PGD after rescaling the logits by each factor."""
    factors = [float(a) for a in factors]
    if not factors or any(a <= 0 for a in factors):
        raise ValueError("scale factors must all be positive")
    attacks = {
        "PGD": AttackConfig(epsilon=epsilon, steps=steps, seed=seed, loss=LossKind(LossTag.CE)),
        "SI-PGD": AttackConfig(epsilon=epsilon, steps=steps, seed=seed, loss=LossKind(LossTag.SI_CE)),
    }
    report = ExperimentReport(["alpha", "attack", "clean_acc", "robust_acc"],
                              metadata={"command": "sweep-scale", "epsilon": epsilon, "steps": steps,
                                        "seed": seed})
    base_pred = predict(net, data.inputs)
    for alpha in factors:
        scaled = rescale_softmax_layer(net, alpha)
        pred = predict(scaled, data.inputs)
        if not np.array_equal(pred, base_pred):
            raise AssertionError(f"rescaling by {alpha} changed clean predictions")
        clean = float(np.mean(pred == data.labels))
        for name, cfg in attacks.items():
            res = run_attack(scaled, data.inputs, data.labels, cfg)
            report.add(alpha=alpha, attack=name, clean_acc=clean, robust_acc=res.robust_accuracy)
    return report


def evaluation_attacks(epsilon: float, steps: int, seed: int, num_classes: int) -> dict:
    out = {
        "PGD": AttackConfig(epsilon=epsilon, steps=steps, seed=seed, loss=LossKind(LossTag.CE)),
        "PGDCW": AttackConfig(epsilon=epsilon, steps=steps, seed=seed, loss=LossKind(LossTag.CW)),
    }
    if num_classes >= 3:
        out["PGDLR"] = AttackConfig(epsilon=epsilon, steps=steps, seed=seed, loss=LossKind(LossTag.DLR))
    out["SI-PGD"] = AttackConfig(epsilon=epsilon, steps=steps, seed=seed, loss=LossKind(LossTag.SI_CE))
    return out


def grid_points(s: Optional[Iterable[float]] = None, m: Optional[Iterable[float]] = None,
                beta: Optional[Iterable[float]] = None):
    """Cartesian product; an axis left as ``None`` stays at the selected operating point."""
    axes = {
        "s": list(s) if s is not None else [OPERATING_POINT["s"]],
        "m": list(m) if m is not None else [OPERATING_POINT["m"]],
        "beta": list(beta) if beta is not None else [OPERATING_POINT["beta"]],
    }
    if not all(axes.values()):
        raise ValueError("ablation grid axes must be non-empty")
    return [dict(zip(axes, combo)) for combo in itertools.product(*axes.values())]


def cmd_ablate(points: Sequence[dict], base: DefenseConfig, train_data: Dataset, test_data: Dataset,
               make_net=None, epsilon: float = 8 / 255, steps: int = 20, seed: int = 0) -> ExperimentReport:
    """Train one SI model per grid point and report Natural / PGD / PGDCW / SI-PGD accuracy."""
    if not points:
        raise ValueError("empty ablation grid")
    make_net = make_net or (lambda: mlp(int(np.prod(train_data.input_shape)), num_classes=train_data.num_classes,
                                        seed=base.seed))
    attacks = evaluation_attacks(epsilon, steps, seed, test_data.num_classes)
    attacks.pop("PGDLR", None)
    report = ExperimentReport(["s", "m", "beta", "natural", "PGD", "PGDCW", "SI-PGD"],
                              metadata={"command": "ablate", "base_config": config_hash(base),
                                        "epsilon": epsilon, "steps": steps})
    for point in points:
        cfg = replace(base, si=True, s=float(point["s"]), m=float(point["m"]), beta=float(point["beta"]))
        ckpt, _ = train(make_net(), train_data, cfg)
        net = ckpt.to_network()
        row = {"s": cfg.s, "m": cfg.m, "beta": cfg.beta, "natural": _clean_acc(net, test_data)}
        for name, acfg in attacks.items():
            row[name] = run_attack(net, test_data.inputs, test_data.labels, acfg).robust_accuracy
        report.add(**row)
    return report


def symmetric_grid(half_width: float, resolution: int) -> np.ndarray:
    """``resolution`` points on [-h, h]; built from integers so ``-grid`` is exactly ``grid[::-1]``."""
    if resolution < 3:
        raise ValueError("grid resolution must be >= 3")
    k = np.arange(resolution, dtype=np.float64)
    return half_width * (2.0 * k - (resolution - 1)) / (resolution - 1)


def _ce_per_example(net: Network, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return L.ce_logits(Tensor(net.logits(x)), y, reduction="none").data


def surface_directions(net: Network, x: np.ndarray, y: np.ndarray, epsilon: float, seed: int):
    """Unit-L-inf PGD-10 direction ``v`` and seeded random sign direction ``r`` for one example."""
    adv = run_attack(net, x, y, AttackConfig(epsilon=epsilon, steps=10, seed=seed)).x_adv
    v = adv - x
    vmax = np.abs(v).max()
    v = v / vmax if vmax > 0 else v
    rng = np.random.default_rng(seed)
    r = rng.choice(np.array([-1.0, 1.0]), size=x.shape)
    return v, r


def example_surface(net: Network, data: Dataset, index: int = 0, half_width: Optional[float] = None,
                    resolution: int = 21, epsilon: float = 8 / 255, seed: int = 0,
                    negate_r: bool = False) -> ExperimentReport:
    """CE loss at ``clip(x + d1 v + d2 r)`` over a square grid of ``(d1, d2)``."""
    if not 0 <= index < len(data):
        raise IndexError(f"example index {index} out of range")
    hw = epsilon if half_width is None else half_width
    x = data.inputs[index:index + 1]
    y = data.labels[index:index + 1]
    v, r = surface_directions(net, x, y, epsilon, seed)
    if negate_r:
        r = -r
    grid = symmetric_grid(hw, resolution)
    d1, d2 = np.meshgrid(grid, grid, indexing="ij")
    d1, d2 = d1.reshape(-1), d2.reshape(-1)
    shape = (-1,) + (1,) * (x.ndim - 1)
    pts = np.clip(x + d1.reshape(shape) * v + d2.reshape(shape) * r, 0.0, 1.0)
    loss = _ce_per_example(net, pts, np.repeat(y, len(d1)))
    report = ExperimentReport(["delta1", "delta2", "loss"],
                              metadata={"command": "surface", "mode": "example", "index": index,
                                        "half_width": hw, "resolution": resolution, "seed": seed,
                                        "clean_loss": float(_ce_per_example(net, x, y)[0])})
    for a, b, l in zip(d1, d2, loss):
        report.add(delta1=float(a), delta2=float(b), loss=float(l))
    return report


def weight_surface(net: Network, data: Dataset, half_width: float = 1.0, resolution: int = 21,
                   epsilon: float = 8 / 255, seed: int = 0, n_eval: int = 200) -> ExperimentReport:
    """Adversarial CE (PGD-10 regenerated per point) as the softmax weight moves along ``W + d * dir``.

    The random direction is rescaled column-wise to the norms of ``W``.
    """
    rng = np.random.default_rng(seed)
    W = net.W
    d = rng.normal(size=W.shape)
    d *= np.linalg.norm(W, axis=0, keepdims=True) / np.maximum(np.linalg.norm(d, axis=0, keepdims=True), 1e-12)
    sub = data.subset(min(n_eval, len(data)))
    report = ExperimentReport(["delta", "adv_loss"],
                              metadata={"command": "surface", "mode": "weight", "half_width": half_width,
                                        "resolution": resolution, "seed": seed, "n_eval": len(sub)})
    for delta in symmetric_grid(half_width, resolution):
        moved = net.copy()
        moved.params["softmax.weight"] = W + delta * d
        adv = run_attack(moved, sub.inputs, sub.labels, AttackConfig(epsilon=epsilon, steps=10, seed=seed)).x_adv
        report.add(delta=float(delta), adv_loss=float(_ce_per_example(moved, adv, sub.labels).mean()))
    return report


def cos_true_class(net: Network, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    z, _ = net.forward(Tensor(x))
    cos = cos_theta(z, Tensor(net.W)).data
    return cos[np.arange(len(y)), y]


def cmd_histogram(net: Network, data: Dataset, epsilon: float = 8 / 255, steps: int = 10, bins: int = 40,
                  seed: int = 0, edges: Optional[Sequence[float]] = None) -> ExperimentReport:
    """Binned ``cos theta_y`` on PGD adversarial examples."""
    adv = run_attack(net, data.inputs, data.labels, AttackConfig(epsilon=epsilon, steps=steps, seed=seed)).x_adv
    cos = cos_true_class(net, adv, data.labels)
    edges = np.linspace(-1.0, 1.0, bins + 1) if edges is None else np.asarray(edges, dtype=np.float64)
    counts, edges = np.histogram(cos, bins=edges)
    report = ExperimentReport(["bin_lo", "bin_hi", "count"],
                              metadata={"command": "histogram", "epsilon": epsilon, "steps": steps,
                                        "seed": seed, "mean_cos": float(cos.mean()), "n": len(cos)})
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        report.add(bin_lo=float(lo), bin_hi=float(hi), count=int(c))
    return report
