"""Sequential model container and versioned checkpoints.

A checkpoint is a single ``.npz`` holding every parameter and persistent
state array under stable names, a JSON metadata record (format version plus
an echo of the experiment configuration), and the exact serialized bytes of
every connectome so the permanent wiring survives save/load bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from . import connectome as conn
from .layers import Conv2d, Layer
from .poolkernel import PoolPlan
from .prcn import NptnLayer, PrcnLayer

CHECKPOINT_VERSION = 1


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, train=True):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad_out):
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and isinstance(layer, (Conv2d, PrcnLayer, NptnLayer)):
                # nothing consumes the gradient w.r.t. the network input
                grad_out = layer.backward(grad_out, input_grad_needed=False)
            else:
                grad_out = layer.backward(grad_out)
        return grad_out

    def param_items(self):
        return [
            (f"{i}.{name}", value, grad)
            for i, layer in enumerate(self.layers)
            for name, value, grad in layer.param_items()
        ]

    def state_items(self):
        return [
            (f"{i}.{name}", value)
            for i, layer in enumerate(self.layers)
            for name, value in layer.state_items()
        ]

    def prcn_layers(self):
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, PrcnLayer)]


def count_params(model: Layer) -> int:
    """Exact learnable-parameter count."""
    return int(sum(v.size for _, v, _ in model.param_items()))


def save_checkpoint(path, model: Sequential, meta: dict | None = None) -> None:
    arrays = {}
    for name, value, _ in model.param_items():
        arrays[f"param:{name}"] = value
    for name, value in model.state_items():
        arrays[f"state:{name}"] = value
    for i, layer in model.prcn_layers():
        blob = conn.serialize(layer.connectome)
        arrays[f"connectome:{i}"] = np.frombuffer(blob, dtype=np.uint8)
    header = {"version": CHECKPOINT_VERSION, "meta": meta or {}}
    arrays["__meta__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path, model: Sequential) -> dict:
    """Restore parameters, state and connectomes in place; returns metadata."""
    with np.load(path) as data:
        header = json.loads(bytes(data["__meta__"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        for name, value, _ in model.param_items():
            key = f"param:{name}"
            if key not in data:
                raise KeyError(f"checkpoint missing {key}")
            stored = data[key]
            if stored.shape != value.shape:
                raise ValueError(f"{key}: shape {stored.shape} != model {value.shape}")
            value[...] = stored
        for name, value in model.state_items():
            value[...] = data[f"state:{name}"]
        for i, layer in model.prcn_layers():
            blob = bytes(data[f"connectome:{i}"])
            layer.connectome = conn.deserialize(blob)
            layer.plan = PoolPlan.from_connectome(layer.connectome)
    return header["meta"]
