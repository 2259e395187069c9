"""Classifiers factored as feature extractor + explicit softmax layer.

A network maps ``x`` to a penultimate feature ``z`` through its backbone and
then to logits ``W^T z + b``.  Parameters live in an ordered dict of numpy
arrays; :meth:`Network.forward` wraps them in fresh tensors on every call so
the graph is rebuilt per evaluation.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .tensor import Tensor

NORM_EPS = 1e-12

CHECKPOINT_MAGIC = b"SIRBCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class Network:
    """Layered feed-forward classifier ``f(x) = softmax(W^T backbone(x) + b)``.

    ``layers`` holds plain dict descriptors:

    * ``{"type": "dense", "in": int, "out": int}``
    * ``{"type": "conv2d", "in": C, "out": F, "kernel": k, "stride": s, "padding": p}``
    * ``{"type": "relu"}`` / ``{"type": "flatten"}``

    Parametrised layers own ``layer{i}.weight`` and ``layer{i}.bias``; the
    softmax layer owns ``softmax.weight`` (``[d, K]``) and ``softmax.bias``.
    """

    def __init__(self, layers: Sequence[dict], input_shape: Sequence[int], num_classes: int,
                 params: Optional[Dict[str, np.ndarray]] = None):
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        self.layers = [dict(layer) for layer in layers]
        self.input_shape = tuple(int(s) for s in input_shape)
        self.num_classes = int(num_classes)
        self.feature_dim = _infer_feature_dim(self.layers, self.input_shape)
        if self.feature_dim < 1:
            raise ValueError("feature dimension must be >= 1")
        self.params: Dict[str, np.ndarray] = {}
        for name, shape in self.param_shapes().items():
            if params is not None and name in params:
                arr = np.array(params[name], dtype=np.float64)
                if arr.shape != shape:
                    raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            else:
                arr = np.zeros(shape)
            self.params[name] = arr

    # ------------------------------------------------------------ structure

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes: Dict[str, Tuple[int, ...]] = {}
        for i, layer in enumerate(self.layers):
            if layer["type"] == "dense":
                shapes[f"layer{i}.weight"] = (layer["in"], layer["out"])
                shapes[f"layer{i}.bias"] = (layer["out"],)
            elif layer["type"] == "conv2d":
                k = layer["kernel"]
                shapes[f"layer{i}.weight"] = (layer["out"], layer["in"], k, k)
                shapes[f"layer{i}.bias"] = (layer["out"],)
        shapes["softmax.weight"] = (self.feature_dim, self.num_classes)
        shapes["softmax.bias"] = (self.num_classes,)
        return shapes

    @property
    def W(self) -> np.ndarray:
        return self.params["softmax.weight"]

    @property
    def b(self) -> np.ndarray:
        return self.params["softmax.bias"]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def architecture(self) -> dict:
        return {
            "layers": self.layers,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
        }

    def copy(self) -> "Network":
        return Network(self.layers, self.input_shape, self.num_classes,
                       {k: v.copy() for k, v in self.params.items()})

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.params.values()])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_parameters():
            raise ValueError(f"expected {self.num_parameters()} parameters, got {flat.size}")
        offset = 0
        for name, p in self.params.items():
            self.params[name] = flat[offset:offset + p.size].reshape(p.shape).copy()
            offset += p.size

    def param_leaves(self) -> Dict[str, Tensor]:
        """Fresh gradient-tracking leaves for every parameter."""
        return {k: Tensor(v, requires_grad=True) for k, v in self.params.items()}

    # ------------------------------------------------------------ evaluation

    def _check_input(self, x: Tensor) -> None:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match network input {self.input_shape}")

    def features(self, x, params: Optional[Dict[str, Tensor]] = None) -> Tensor:
        x = T.as_tensor(x)
        self._check_input(x)
        p = params if params is not None else {k: Tensor(v) for k, v in self.params.items()}
        h = x
        for i, layer in enumerate(self.layers):
            kind = layer["type"]
            if kind == "dense":
                h = T.matmul(h, p[f"layer{i}.weight"]) + p[f"layer{i}.bias"]
            elif kind == "conv2d":
                h = T.conv2d(h, p[f"layer{i}.weight"], layer.get("stride", 1), layer.get("padding", 0))
                h = h + T.reshape(p[f"layer{i}.bias"], (1, -1, 1, 1))
            elif kind == "relu":
                h = T.relu(h)
            elif kind == "flatten":
                h = T.reshape(h, (h.shape[0], -1))
            else:
                raise ValueError(f"unknown layer type {kind!r}")
        return h

    def forward(self, x, params: Optional[Dict[str, Tensor]] = None) -> Tuple[Tensor, Tensor]:
        """Return ``(z, logits)``; gradients reach ``x`` and any leaves in ``params``."""
        p = params if params is not None else {k: Tensor(v) for k, v in self.params.items()}
        z = self.features(x, p)
        logits = T.matmul(z, p["softmax.weight"]) + p["softmax.bias"]
        return z, logits

    __call__ = forward

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(x))[1].data


def _infer_feature_dim(layers: Sequence[dict], input_shape: Tuple[int, ...]) -> int:
    shape = tuple(input_shape)
    for layer in layers:
        kind = layer["type"]
        if kind == "dense":
            if len(shape) != 1 or shape[0] != layer["in"]:
                raise ValueError(f"dense layer expects {layer['in']} inputs, got shape {shape}")
            shape = (layer["out"],)
        elif kind == "conv2d":
            if len(shape) != 3 or shape[0] != layer["in"]:
                raise ValueError(f"conv2d layer expects {layer['in']} channels, got shape {shape}")
            k, s, pad = layer["kernel"], layer.get("stride", 1), layer.get("padding", 0)
            h = (shape[1] + 2 * pad - k) // s + 1
            w = (shape[2] + 2 * pad - k) // s + 1
            if h < 1 or w < 1:
                raise ValueError("conv2d output would be empty")
            shape = (layer["out"], h, w)
        elif kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind == "relu":
            pass
        else:
            raise ValueError(f"unknown layer type {kind!r}")
    if len(shape) != 1:
        raise ValueError(f"backbone must end in a flat feature, got shape {shape}")
    return shape[0]


def init_parameters(net: Network, seed: int = 0) -> Network:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    for name, p in net.params.items():
        if name.endswith(".bias"):
            net.params[name] = np.zeros_like(p)
            continue
        fan_in = p.shape[0] if p.ndim == 2 else int(np.prod(p.shape[1:]))
        net.params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=p.shape)
    return net


def mlp(input_dim: int = 2, hidden: Sequence[int] = (128, 128), num_classes: int = 2, seed: int = 0) -> Network:
    layers: List[dict] = []
    width = input_dim
    for h in hidden:
        layers += [{"type": "dense", "in": width, "out": h}, {"type": "relu"}]
        width = h
    return init_parameters(Network(layers, (input_dim,), num_classes), seed)


def small_convnet(num_classes: int = 10, channels: int = 1, size: int = 28, seed: int = 0) -> Network:
    """Two strided 3x3 convs + one hidden dense layer; about 100k parameters at 28x28."""
    after = ((size + 1) // 2 + 1) // 2
    layers = [
        {"type": "conv2d", "in": channels, "out": 8, "kernel": 3, "stride": 2, "padding": 1},
        {"type": "relu"},
        {"type": "conv2d", "in": 8, "out": 16, "kernel": 3, "stride": 2, "padding": 1},
        {"type": "relu"},
        {"type": "flatten"},
        {"type": "dense", "in": 16 * after * after, "out": 128},
        {"type": "relu"},
    ]
    return init_parameters(Network(layers, (channels, size, size), num_classes), seed)


# ---------------------------------------------------------------- heads and helpers


def cos_theta(z, W) -> Tensor:
    """Cosine between each feature row ``z_i`` and each class column ``W_k``."""
    z, W = T.as_tensor(z), T.as_tensor(W)
    zn = T.clamp(T.norm(z, axis=1, keepdims=True), lo=NORM_EPS)
    wn = T.clamp(T.norm(W, axis=0, keepdims=True), lo=NORM_EPS)
    cos = T.matmul(z / zn, W / wn)
    return T.clamp(cos, -1.0, 1.0)


def rescale_softmax_layer(net: Network, alpha: float) -> Network:
    """Equivalent classifier with logits multiplied by ``alpha > 0``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    out = net.copy()
    out.params["softmax.weight"] = net.params["softmax.weight"] * alpha
    out.params["softmax.bias"] = net.params["softmax.bias"] * alpha
    return out


def predict(net: Network, x: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    out = [np.argmax(net.logits(x[i:i + batch_size]), axis=1) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(net: Network, dataset) -> float:
    inputs, labels = _unpack(dataset)
    return float(np.mean(predict(net, inputs) == labels))


def _unpack(dataset):
    if hasattr(dataset, "inputs"):
        return dataset.inputs, dataset.labels
    inputs, labels = dataset
    return np.asarray(inputs), np.asarray(labels)


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    """Architecture, flat float64 parameter vector and training metadata.

    On disk: ``b"SIRBCKPT"``, little-endian ``uint32`` version, ``uint32``
    header length, a UTF-8 JSON header (``architecture``, ``param_names``,
    ``param_shapes``, ``metadata``), then ``n_params`` little-endian float64s.
    """

    architecture: dict
    parameters: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_network(cls, net: Network, **metadata) -> "Checkpoint":
        return cls(copy.deepcopy(net.architecture()), net.flat_parameters().copy(), dict(metadata))

    def to_network(self) -> Network:
        arch = self.architecture
        net = Network(arch["layers"], arch["input_shape"], arch["num_classes"])
        net.load_flat(self.parameters)
        return net

    def to_bytes(self) -> bytes:
        net = Network(self.architecture["layers"], self.architecture["input_shape"],
                      self.architecture["num_classes"])
        header = {
            "architecture": self.architecture,
            "param_names": list(net.params),
            "param_shapes": [list(s) for s in net.param_shapes().values()],
            "metadata": self.metadata,
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        buf.write(blob)
        buf.write(np.asarray(self.parameters, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:8] != CHECKPOINT_MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        if len(raw) < 16:
            raise CheckpointError("truncated checkpoint header")
        version, hlen = struct.unpack("<II", raw[8:16])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        if len(raw) < 16 + hlen:
            raise CheckpointError("truncated checkpoint header")
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        body = raw[16 + hlen:]
        n = sum(int(np.prod(s)) for s in header["param_shapes"])
        if len(body) != 8 * n:
            raise CheckpointError(f"expected {8 * n} parameter bytes, found {len(body)}")
        params = np.frombuffer(body, dtype="<f8").astype(np.float64)
        return cls(header["architecture"], params, header["metadata"])

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()
