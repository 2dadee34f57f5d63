from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from petra.nn.layers import (
    PRECISION_BYTES,
    BatchNorm,
    Layer,
    NumericError,
    ShapeError,
    _Affine,
)

TASK_KINDS = ("binary", "multiclass", "regression")
DEFAULT_LOSS = {"binary": "bce", "multiclass": "ce", "regression": "mse"}


@dataclass(frozen=True)
class Task:
    kind: str
    n_classes: int = 2

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "multiclass" and self.n_classes < 2:
            raise ValueError("multiclass task needs n_classes >= 2")

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.kind == "multiclass" else 1

    @property
    def quality_name(self) -> str:
        return {"binary": "ROC-AUC", "multiclass": "f1", "regression": "rmse"}[self.kind]


def storage_kind(layer: Layer, name: str, arr: np.ndarray) -> str:
    """Storage precision tag of one stored tensor."""
    rec = layer.quant
    if rec is not None and rec.dtype == "int8" and name in rec.scales:
        return "int8"
    if layer.precision == "fp16":
        return "fp16"
    return "fp64" if arr.dtype == np.float64 else "fp32"


def quant_metadata_bytes(layer: Layer, dtype) -> int:
    rec = layer.quant
    if rec is None or rec.dtype != "int8":
        return 0
    item = np.dtype(dtype).itemsize
    n = len(rec.scales) * item
    if rec.act_range is not None:
        n += 2 * item
    return n


class Network:
    """Ordered layer list with a task head.

    ``skips`` holds residual annotations ``(a, b)``: the input of layer ``a``
    is added to the output of layer ``b`` (``a <= b``, shapes must agree).
    """

    def __init__(self, layers, task: Task, input_shape, skips=(), loss=None, dtype=np.float32):
        self.layers: list[Layer] = list(layers)
        self.task = task
        self.input_shape = tuple(int(s) for s in input_shape)
        self.skips = [tuple(s) for s in skips]
        self.loss = loss or DEFAULT_LOSS[task.kind]
        self.dtype = np.dtype(dtype)
        self.validate()

    # ------------------------------------------------------------------ structure
    def shapes(self):
        """Per-layer output shapes (batch dim excluded); raises ShapeError on mismatch."""
        shape = self.input_shape
        ins, outs = [], []
        for layer in self.layers:
            ins.append(shape)
            shape = layer.output_shape(shape)
            outs.append(shape)
        for a, b in self.skips:
            if not 0 <= a <= b < len(self.layers):
                raise ShapeError(f"invalid skip ({a}, {b})")
            if ins[a] != outs[b]:
                raise ShapeError(f"skip ({a}, {b}) joins {ins[a]} with {outs[b]}")
        return ins, outs

    def validate(self):
        _, outs = self.shapes()
        if not outs or outs[-1] != (self.task.output_dim,):
            raise ShapeError(
                f"head produces {outs[-1] if outs else None}, task {self.task.kind} needs ({self.task.output_dim},)")

    def affine_layers(self):
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, _Affine)]

    def has_batchnorm(self) -> bool:
        return any(isinstance(l, BatchNorm) for l in self.layers)

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield i, name, p

    def is_int8(self) -> bool:
        return any(l.quant is not None and l.quant.dtype == "int8" for l in self.layers)

    # ------------------------------------------------------------------ compute
    def forward(self, x, train=False, update_stats=False, observer=None):
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"network expects (batch, {self.input_shape}), got {x.shape}")
        skip_to = {}
        for a, b in self.skips:
            skip_to.setdefault(b, []).append(a)
        inputs = []
        for i, layer in enumerate(self.layers):
            inputs.append(x)
            if observer is not None:
                observer(i, layer, x)
            x = layer.forward(x, train=train, update_stats=update_stats)
            for a in skip_to.get(i, ()):
                x = x + inputs[a]
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite network output")
        return x

    def backward(self, dout):
        """Backpropagate ``dout``; returns ``{(layer_idx, name): grad}`` with masks applied."""
        pending = {}
        skips_from = {}
        for a, b in self.skips:
            skips_from.setdefault(b, []).append(a)
        g = dout
        for i in range(len(self.layers) - 1, -1, -1):
            for a in skips_from.get(i, ()):
                pending[a] = pending.get(a, 0) + g
            g = self.layers[i].backward(g)
            if i in pending:
                g = g + pending.pop(i)
        grads = {}
        for i, layer in enumerate(self.layers):
            for name, gr in layer.grads.items():
                m = layer.masks.get(name)
                grads[(i, name)] = gr * m if m is not None else gr
        return grads

    def predict(self, x, batch_size=512):
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    # ------------------------------------------------------------------ accounting
    def count_parameters(self) -> int:
        return int(sum(a.size for l in self.layers for _, a in l.stored_tensors()))

    def model_size_bytes(self) -> int:
        total = 0
        for layer in self.layers:
            for name, arr in layer.stored_tensors():
                total += arr.size * PRECISION_BYTES[storage_kind(layer, name, arr)]
            total += quant_metadata_bytes(layer, self.dtype)
        return int(total)

    # ------------------------------------------------------------------ copies
    def clear_caches(self):
        for layer in self.layers:
            layer.clear_cache()
            layer.grads = {}
            if hasattr(layer, "_geom"):
                del layer._geom

    def copy(self) -> "Network":
        self.clear_caches()
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Network":
        net = self.copy()
        net.dtype = np.dtype(dtype)
        for layer in net.layers:
            for d in (layer.params, layer.buffers, layer.masks):
                for k in d:
                    d[k] = d[k].astype(dtype)
        return net

    def __repr__(self):
        return f"Network({self.task.kind}, {[l.kind for l in self.layers]}, skips={self.skips})"
