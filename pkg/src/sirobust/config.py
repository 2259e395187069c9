"""INI run configuration and dataset/attack spec strings.

Config file grammar (``configparser`` INI; every key optional)::

    [model]          arch = mlp | convnet, hidden = 128,128, seed = 0
    [defense]        method = AT|TRADES|ALP|MART, si = true|false, beta, lambda,
                     alp_mix, s, m, mart_detach_weight, seed
    [inner_attack]   epsilon, eta, steps, restarts
    [optimizer]      lr, momentum, weight_decay, epochs, milestones = 30,40, batch_size
    [eval]           epsilon, steps, seed
    [grid]           s = 10,15,..., m = ..., beta = ...   (ablate only)

Numbers may be written as fractions, e.g. ``epsilon = 8/255``.

Dataset specs are ``kind:key=value,...``::

    moons:n=500,noise=0.1,seed=0
    blobs:n=500,k=4,sd=0.08,seed=0
    idx:images=PATH,labels=PATH
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .attacks import AttackConfig
from .datasets import Dataset, gen_gaussian_blobs, gen_two_moons, load_idx
from .defenses import DefenseConfig, OptimizerConfig
from .model import Network, mlp, small_convnet


class ConfigError(ValueError):
    pass


def number(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def number_list(text: str) -> List[float]:
    return [number(t) for t in text.split(",") if t.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    defense: DefenseConfig = field(default_factory=DefenseConfig)
    arch: str = "mlp"
    hidden: Tuple[int, ...] = (128, 128)
    model_seed: int = 0
    eval_epsilon: float = 8 / 255
    eval_steps: int = 20
    eval_seed: int = 0
    grid: Dict[str, List[float]] = field(default_factory=dict)

    def make_network(self, data: Dataset) -> Network:
        if self.arch == "mlp":
            in_dim = 1
            for d in data.input_shape:
                in_dim *= d
            if len(data.input_shape) != 1:
                raise ConfigError("mlp expects flat inputs; use arch = convnet for images")
            return mlp(in_dim, self.hidden, data.num_classes, seed=self.model_seed)
        if self.arch == "convnet":
            c, h, w = data.input_shape
            if h != w:
                raise ConfigError("convnet expects square images")
            return small_convnet(data.num_classes, c, h, seed=self.model_seed)
        raise ConfigError(f"unknown arch {self.arch!r}")


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_string(text)
    known = {"model", "defense", "inner_attack", "optimizer", "eval", "grid"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    def sec(name):
        return cp[name] if cp.has_section(name) else {}

    model = sec("model")
    d = sec("defense")
    ia = sec("inner_attack")
    op = sec("optimizer")
    ev = sec("eval")

    inner_kwargs = {"steps": 10}
    if "epsilon" in ia:
        inner_kwargs["epsilon"] = number(ia["epsilon"])
    if "eta" in ia:
        inner_kwargs["eta"] = number(ia["eta"])
    if "steps" in ia:
        inner_kwargs["steps"] = int(ia["steps"])
    if "restarts" in ia:
        inner_kwargs["restarts"] = int(ia["restarts"])

    opt_kwargs = {}
    for key in ("lr", "momentum", "weight_decay"):
        if key in op:
            opt_kwargs[key] = number(op[key])
    for key in ("epochs", "batch_size"):
        if key in op:
            opt_kwargs[key] = int(op[key])
    if "milestones" in op:
        opt_kwargs["milestones"] = tuple(int(v) for v in number_list(op["milestones"]))

    def_kwargs = {
        "inner_attack": AttackConfig(**inner_kwargs),
        "optimizer": OptimizerConfig(**opt_kwargs),
    }
    if "method" in d:
        def_kwargs["method"] = d["method"].strip().upper()
    if "si" in d:
        def_kwargs["si"] = _bool(d["si"])
    if "mart_detach_weight" in d:
        def_kwargs["mart_detach_weight"] = _bool(d["mart_detach_weight"])
    for key, attr in (("beta", "beta"), ("lambda", "lam"), ("alp_mix", "alp_mix"), ("s", "s"), ("m", "m")):
        if key in d:
            def_kwargs[attr] = number(d[key])
    if "seed" in d:
        def_kwargs["seed"] = int(d["seed"])

    try:
        defense = DefenseConfig(**def_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    grid = {k: number_list(v) for k, v in sec("grid").items()}
    bad = set(grid) - {"s", "m", "beta"}
    if bad:
        raise ConfigError(f"unknown grid axes: {sorted(bad)}")

    return RunConfig(
        defense=defense,
        arch=model.get("arch", "mlp").strip(),
        hidden=tuple(int(v) for v in number_list(model.get("hidden", "128,128"))),
        model_seed=int(model.get("seed", 0)),
        eval_epsilon=number(ev["epsilon"]) if "epsilon" in ev else 8 / 255,
        eval_steps=int(ev.get("steps", 20)),
        eval_seed=int(ev.get("seed", 0)),
        grid=grid,
    )


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(p.read_text())


def parse_data_spec(spec: str) -> Tuple[str, Dict[str, str]]:
    kind, _, rest = spec.partition(":")
    kind = kind.strip().lower()
    opts: Dict[str, str] = {}
    for part in rest.split(","):
        if not part.strip():
            continue
        key, eq, value = part.partition("=")
        if not eq:
            raise ConfigError(f"bad dataset option {part!r} (expected key=value)")
        opts[key.strip().lower()] = value.strip()
    return kind, opts


def load_data(spec: str, split: str = "train", seed_offset: int = 0) -> Dataset:
    """Build a dataset from a spec string; ``seed_offset`` shifts the generator seed for held-out splits."""
    kind, opts = parse_data_spec(spec)
    if kind == "moons":
        return gen_two_moons(int(opts.get("n", 500)), number(opts.get("noise", "0.1")),
                             int(opts.get("seed", 0)) + seed_offset, split)
    if kind == "blobs":
        return gen_gaussian_blobs(int(opts.get("n", 500)), int(opts.get("k", 3)), number(opts.get("sd", "0.05")),
                                  int(opts.get("seed", 0)) + seed_offset, split)
    if kind == "idx":
        if "images" not in opts or "labels" not in opts:
            raise ConfigError("idx spec needs images=PATH,labels=PATH")
        ds = load_idx(opts["images"], opts["labels"], split)
        if "n" in opts:
            ds = ds.subset(int(opts["n"]))
        return ds
    raise ConfigError(f"unknown dataset kind {kind!r}")
