from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from petra import metrics
from petra.nn.backprop import loss_and_grads
from petra.nn.losses import scores_from_output
from petra.nn.network import Network
from petra.nn.optim import Optimizer
from petra.regularizers import CompositeLoss


@dataclass
class TrainResult:
    net: Network
    trace: list = field(default_factory=list)  # per-epoch validation score, higher is better
    losses: list = field(default_factory=list)  # per-epoch mean training loss
    stopped_early: bool = False
    best_epoch: int = 0


def validation_score(net: Network, x, y) -> float:
    out = net.predict(x)
    raw = metrics.quality(net.task.kind, scores_from_output(net.task.kind, out), y)
    return metrics.oriented(net.task.kind, raw)


def _snapshot(net):
    return [({k: v.copy() for k, v in l.params.items()}, {k: v.copy() for k, v in l.buffers.items()})
            for l in net.layers]


def _restore(net, snap):
    for layer, (params, buffers) in zip(net.layers, snap):
        layer.params = params
        layer.buffers = buffers


def train(net: Network, data, epochs: int, optimizer: Optimizer, loss: CompositeLoss,
          batch_size: int = 64, rng: np.random.Generator | None = None,
          early_stop_hook=None, full_batch: bool = False) -> TrainResult:
    """Mini-batch training; returns the network restored to its best validation epoch.

    ``data`` provides ``x_train, y_train, x_val, y_val``. ``early_stop_hook``
    is called as ``hook(trace)`` after every epoch and aborts training when it
    returns True.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    x, y = data.x_train, data.y_train
    n = len(x)
    result = TrainResult(net=net)
    best = -np.inf
    best_snap = None
    for epoch in range(epochs):
        order = np.arange(n) if full_batch else rng.permutation(n)
        step = n if full_batch else batch_size
        epoch_loss = 0.0
        for s in range(0, n, step):
            idx = order[s:s + step]
            res = loss_and_grads(net, x[idx], y[idx], loss, train=True, update_stats=True)
            optimizer.step(net, res.grads)
            epoch_loss += res.total * len(idx)
        result.losses.append(epoch_loss / n)
        score = validation_score(net, data.x_val, data.y_val)
        result.trace.append(score)
        if score > best:
            best = score
            best_snap = _snapshot(net)
            result.best_epoch = epoch
        if early_stop_hook is not None and early_stop_hook(result.trace):
            result.stopped_early = True
            break
    if best_snap is not None:
        _restore(net, best_snap)
    net.clear_caches()
    return result
