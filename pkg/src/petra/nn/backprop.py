"""Loss evaluation and parameter gradients for a network under a composite loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from petra import regularizers as reg
from petra.nn.layers import NumericError
from petra.nn.losses import task_loss
from petra.nn.network import Network


@dataclass
class LossResult:
    total: float
    parts: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)


def decomposed_layers(net: Network):
    return [(i, l) for i, l in net.affine_layers() if l.is_decomposed]


def weight_tensors(net: Network):
    return [(i, n) for i, l in net.affine_layers() for n in l.weight_names]


def _check(name, value):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite value in loss term {name!r}")


def task_grads(net: Network, x, y, base: str, train=True, update_stats=False):
    out = net.forward(x, train=train, update_stats=update_stats)
    value, dout = task_loss(base, out, y)
    _check(base, value)
    grads = net.backward(dout)
    return value, grads


def _lai_hvp(net, x, y, base, train, keys, direction):
    """Hessian-vector product of the task loss along ``direction`` by central differences of gradients."""
    vnorm = np.sqrt(sum(float(np.sum(d * d)) for d in direction))
    if vnorm == 0:
        return {k: np.zeros_like(d) for k, d in zip(keys, direction)}
    eps = 1e-4 / vnorm if net.dtype == np.float64 else 1e-2 / vnorm
    saved = {k: net.layers[k[0]].params[k[1]].copy() for k in keys}

    def grads_at(sign):
        for k, d in zip(keys, direction):
            net.layers[k[0]].params[k[1]][...] = saved[k] + sign * eps * d
        return task_grads(net, x, y, base, train=train)[1]

    try:
        gp = grads_at(+1.0)
        gm = grads_at(-1.0)
    finally:
        for k in keys:
            net.layers[k[0]].params[k[1]][...] = saved[k]
    return {k: (gp[k] - gm[k]) / (2 * eps) for k in keys}


def loss_and_grads(net: Network, x, y, loss: reg.CompositeLoss, train=True, update_stats=False) -> LossResult:
    """Forward + backward of ``loss`` on one batch.

    Factor regularizers apply to decomposed layers only; with no decomposed
    layer they contribute nothing. Masked positions get zero gradient.
    """
    base_val, grads = task_grads(net, x, y, loss.base, train=train, update_stats=update_stats)
    parts = {loss.base: base_val}
    total = base_val
    task_only = {k: g.copy() for k, g in grads.items()} if loss.lai else None

    def add(key, g):
        m = net.layers[key[0]].masks.get(key[1])
        grads[key] = grads[key] + (g * m if m is not None else g)

    dec = decomposed_layers(net)
    if dec and loss.has_factor_terms:
        lo_sum = lh_sum = 0.0
        n = len(dec)
        for i, layer in dec:
            U, S, V = layer.params["U"], layer.params["S"], layer.params["V"]
            if loss.lambda_o:
                val, gU, gV = reg.orthogonality_grad(U, V)
                lo_sum += val
                add((i, "U"), loss.lambda_o / n * gU)
                add((i, "V"), loss.lambda_o / n * gV)
            if loss.lambda_h:
                try:
                    val, gS = reg.hoyer_grad(S)
                except ValueError:
                    continue
                lh_sum += val
                add((i, "S"), loss.lambda_h / n * gS)
        if loss.lambda_o:
            parts["orthogonality"] = loss.lambda_o / n * lo_sum
        if loss.lambda_h:
            parts["hoyer"] = loss.lambda_h / n * lh_sum
    wkeys = weight_tensors(net)
    if loss.l1:
        ws = [net.layers[i].params[n] for i, n in wkeys]
        parts["l1"] = loss.l1 * reg.sparsity_l1(ws)
        for k, w in zip(wkeys, ws):
            add(k, loss.l1 * reg.sparsity_l1_grad(w))
    if loss.norm:
        ws = [net.layers[i].params[n] for i, n in wkeys]
        parts["norm"] = loss.norm * reg.norm_loss(ws)
        for k, w in zip(wkeys, ws):
            add(k, loss.norm * reg.norm_loss_grad(w))
    if loss.lai:
        keys = sorted(task_only)
        g_train = [task_only[k] for k in keys]
        parts["lai"] = loss.lai * reg.lai_loss(g_train, loss.lai_tau)
        direction = reg.lai_direction(g_train, loss.lai_tau)
        if parts["lai"] > 0:
            hv = _lai_hvp(net, x, y, loss.base, train, keys, direction)
            for k in keys:
                add(k, loss.lai * hv[k])
    for name, v in parts.items():
        _check(name, v)
        if name != loss.base:
            total += v
    for k, g in grads.items():
        _check(f"gradient of {k}", g)
    return LossResult(total=float(total), parts=parts, grads=grads)


def loss_value(net: Network, x, y, loss: reg.CompositeLoss, train=True) -> float:
    """Total loss without gradients (the Lai term still needs task gradients)."""
    if loss.lai:
        return loss_and_grads(net, x, y, loss, train=train).total
    out = net.forward(x, train=train)
    total, _ = task_loss(loss.base, out, y)
    dec = decomposed_layers(net)
    factors = [(l.params["U"], l.params["S"], l.params["V"]) for _, l in dec]
    ws = [net.layers[i].params[n] for i, n in weight_tensors(net)]
    aux = loss.l1 * reg.sparsity_l1(ws) + loss.norm * reg.norm_loss(ws)
    return reg.composite_loss(total, factors, loss.lambda_o, loss.lambda_h, aux)
