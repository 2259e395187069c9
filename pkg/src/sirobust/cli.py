"""Command-line driver.

Every command writes CSV (``#``-prefixed metadata, then a header row) into
``--out`` and exits 0; failures print one ``error: <Kind>: <message>`` line
to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from . import experiments as E
from .attacks import AttackConfig, SpsaConfig, evaluate_suite
from .config import ConfigError, RunConfig, load_config, load_data, number, number_list
from .defenses import train
from .losses import LossKind, LossTag
from .model import Checkpoint
from .report import config_hash

ATTACK_LOSSES = {"pgd": LossTag.CE, "pgdcw": LossTag.CW, "pgdlr": LossTag.DLR, "sipgd": LossTag.SI_CE}


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _eval_data(args, default_offset: int = 1):
    """``--test-data`` if given; otherwise the ``--data`` generator with a shifted seed."""
    if getattr(args, "test_data", None):
        return load_data(args.test_data, split="test")
    return load_data(args.data, split="test", seed_offset=default_offset if args.data.startswith(("moons", "blobs")) else 0)


def _load_ckpt(path: str):
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return Checkpoint.load(path).to_network()


def _provenance(args) -> dict:
    """Arguments that determine the output; file arguments contribute their contents, not their paths."""
    prov = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "out", "timing", "verbose"):
            continue
        if key in ("ckpt", "config", "grid") and value and Path(value).is_file():
            value = hashlib.sha256(Path(value).read_bytes()).hexdigest()
        prov[key] = value
    return prov


def _write(report, out: Path, name: str, args) -> Path:
    report.metadata.setdefault("command", args.command)
    report.metadata["seed"] = getattr(args, "seed", 0)
    report.metadata["config_hash"] = config_hash(_provenance(args))
    path = out / name
    report.to_csv(path, timing=getattr(args, "timing", False))
    return path


# ---------------------------------------------------------------- commands


def run_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.defense = replace(cfg.defense, seed=args.seed)
    data = load_data(args.data, split="train")
    net = cfg.make_network(data)
    ckpt, tlog = train(net, data, cfg.defense)
    out = _out_dir(args.out)
    ckpt.save(out / "model.ckpt")
    rep = tlog.to_report({"command": "train", "defense": cfg.defense.name})
    _write(rep, out, "train_log.csv", args)
    return 0


def _attack_config(args, kind: str):
    if kind == "spsa":
        return SpsaConfig(epsilon=args.eps, iterations=args.steps if args.steps is not None else 100,
                          samples=args.spsa_samples, seed=args.seed,
                          loss=LossKind(LossTag.CW, on_logits=args.on_logits))
    steps = args.steps if args.steps is not None else 20
    return AttackConfig(epsilon=args.eps, steps=steps, restarts=args.restarts, seed=args.seed,
                        loss=LossKind(ATTACK_LOSSES[kind], s=args.s, on_logits=args.on_logits))


def run_attack_cmd(args) -> int:
    net = _load_ckpt(args.ckpt)
    data = _eval_data(args)
    report = evaluate_suite(net, data, [_attack_config(args, args.attack)])
    _write(report, _out_dir(args.out), "attack.csv", args)
    return 0


def run_report(args) -> int:
    """Table-style comparison: every PGD-family attack, single run and ``--restarts`` restarts."""
    net = _load_ckpt(args.ckpt)
    data = _eval_data(args)
    kinds = ["pgd", "pgdcw"] + (["pgdlr"] if net.num_classes >= 3 else []) + ["sipgd"]
    configs = []
    for restarts in (1, args.restarts):
        for kind in kinds:
            steps = args.steps if args.steps is not None else 20
            configs.append(AttackConfig(epsilon=args.eps, steps=steps, restarts=restarts, seed=args.seed,
                                        loss=LossKind(ATTACK_LOSSES[kind], s=args.s, on_logits=args.on_logits)))
    report = evaluate_suite(net, data, configs)
    _write(report, _out_dir(args.out), "report.csv", args)
    return 0


def run_sweep(args) -> int:
    net = _load_ckpt(args.ckpt)
    data = _eval_data(args)
    factors = number_list(args.factors) if args.factors else E.DEFAULT_FACTORS
    report = E.cmd_sweep_scale(net, data, factors, epsilon=args.eps, steps=args.steps or 20, seed=args.seed)
    _write(report, _out_dir(args.out), "sweep_scale.csv", args)
    return 0


def run_ablate(args) -> int:
    cfg = load_config(args.grid)
    train_data = load_data(args.data, split="train")
    test_data = _eval_data(args)
    points = E.grid_points(cfg.grid.get("s"), cfg.grid.get("m"), cfg.grid.get("beta"))
    report = E.cmd_ablate(points, cfg.defense, train_data, test_data,
                          make_net=lambda: cfg.make_network(train_data),
                          epsilon=cfg.eval_epsilon, steps=cfg.eval_steps, seed=cfg.eval_seed)
    _write(report, _out_dir(args.out), "ablate.csv", args)
    return 0


def run_surface(args) -> int:
    net = _load_ckpt(args.ckpt)
    data = _eval_data(args)
    if args.mode == "example":
        report = E.example_surface(net, data, args.index, args.half_width, args.resolution,
                                   epsilon=args.eps, seed=args.seed, negate_r=args.negate_r)
    else:
        hw = args.half_width if args.half_width is not None else 1.0
        report = E.weight_surface(net, data, hw, args.resolution, epsilon=args.eps, seed=args.seed,
                                  n_eval=args.n_eval)
    _write(report, _out_dir(args.out), f"surface_{args.mode}.csv", args)
    return 0


def run_histogram(args) -> int:
    net = _load_ckpt(args.ckpt)
    data = _eval_data(args)
    report = E.cmd_histogram(net, data, epsilon=args.eps, steps=args.steps or 10, bins=args.bins, seed=args.seed)
    _write(report, _out_dir(args.out), "histogram.csv", args)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sirobust", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, ckpt=True):
        if ckpt:
            sp.add_argument("--ckpt", required=True)
        sp.add_argument("--data", default="moons:n=500,noise=0.1,seed=0")
        sp.add_argument("--test-data", default=None)
        sp.add_argument("--out", default=".")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--timing", action="store_true", help="include wall-clock columns")

    def attack_knobs(sp, steps_default=None):
        sp.add_argument("--eps", type=number, default=8 / 255)
        sp.add_argument("--steps", type=int, default=steps_default)

    sp = sub.add_parser("train", help="adversarially train a model")
    sp.add_argument("--config", default=None)
    sp.add_argument("--data", default="moons:n=500,noise=0.1,seed=0")
    sp.add_argument("--out", default=".")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--timing", action="store_true")
    sp.set_defaults(func=run_train)

    sp = sub.add_parser("attack", help="evaluate one attack")
    common(sp)
    attack_knobs(sp)
    sp.add_argument("--attack", choices=sorted(list(ATTACK_LOSSES) + ["spsa"]), default="pgd")
    sp.add_argument("--restarts", type=int, default=1)
    sp.add_argument("--s", type=number, default=15.0)
    sp.add_argument("--on-logits", action="store_true", help="CW/DLR on logits instead of probabilities")
    sp.add_argument("--spsa-samples", type=int, default=128)
    sp.set_defaults(func=run_attack_cmd)

    sp = sub.add_parser("report", help="all PGD-family attacks, single run and with restarts")
    common(sp)
    attack_knobs(sp)
    sp.add_argument("--restarts", type=int, default=5)
    sp.add_argument("--s", type=number, default=15.0)
    sp.add_argument("--on-logits", action="store_true")
    sp.set_defaults(func=run_report)

    sp = sub.add_parser("sweep-scale", help="robust accuracy vs logit rescaling factor")
    common(sp)
    attack_knobs(sp)
    sp.add_argument("--factors", default=None, help="comma-separated positive factors")
    sp.set_defaults(func=run_sweep)

    sp = sub.add_parser("ablate", help="train and evaluate over an s/m/beta grid")
    sp.add_argument("--grid", required=True)
    sp.add_argument("--data", default="moons:n=500,noise=0.1,seed=0")
    sp.add_argument("--test-data", default=None)
    sp.add_argument("--out", default=".")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--timing", action="store_true")
    sp.set_defaults(func=run_ablate)

    sp = sub.add_parser("surface", help="loss surface around an example or along a weight direction")
    common(sp)
    attack_knobs(sp)
    sp.add_argument("--mode", choices=["example", "weight"], default="example")
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--half-width", type=number, default=None)
    sp.add_argument("--resolution", type=int, default=21)
    sp.add_argument("--negate-r", action="store_true")
    sp.add_argument("--n-eval", type=int, default=200)
    sp.set_defaults(func=run_surface)

    sp = sub.add_parser("histogram", help="cos(theta_y) histogram on PGD adversarial examples")
    common(sp)
    attack_knobs(sp)
    sp.add_argument("--bins", type=int, default=40)
    sp.set_defaults(func=run_histogram)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, IndexError, AssertionError, RuntimeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
