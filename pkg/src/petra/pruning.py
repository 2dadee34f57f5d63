"""Importance scoring and mask-based pruning.

Prunable tensors are Linear/Conv2D weights (the U and V factors for
decomposed layers); biases and BatchNorm parameters are never scored.
Structured mode removes whole output channels and, through ``compact``,
physically shrinks the layer and its consumer.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from petra.nn.backprop import task_grads, weight_tensors
from petra.nn.layers import BatchNorm, Conv2D, Flatten, ReLU, _Affine
from petra.nn.network import Network

CRITERIA = ("magnitude", "taylor", "hessian", "bn_scale", "lamp")
SCOPES = ("layer", "global")
NEEDS_GRADIENTS = ("taylor", "hessian")


class PruningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ImportanceCriterion:
    kind: str = "magnitude"
    scope: str = "layer"

    def __post_init__(self):
        if self.kind not in CRITERIA:
            raise ValueError(f"unknown importance criterion {self.kind!r}")
        if self.scope not in SCOPES:
            raise ValueError(f"unknown scope {self.scope!r}")


@dataclass(frozen=True)
class PruneSpec:
    ratio: float
    criterion: ImportanceCriterion = ImportanceCriterion()
    structured: bool = False

    def __post_init__(self):
        if not 0 <= self.ratio < 1:
            raise ValueError(f"ratio must be in [0, 1), got {self.ratio}")


# ---------------------------------------------------------------------- structure
@dataclass
class ChannelGroup:
    """Output channels of ``layer`` together with every tensor that must shrink with them."""

    layer: int
    bn: int | None
    consumer: int
    per_channel: int  # consumer input columns fed by one channel (H*W across a Flatten)


def channel_groups(net: Network) -> dict:
    """Layers whose output channels can be removed without touching a residual join."""
    ins, outs = net.shapes()
    groups = {}
    layers = net.layers
    for i, layer in net.affine_layers():
        j = i + 1
        bn = None
        if j < len(layers) and isinstance(layers[j], BatchNorm):
            bn = j
            j += 1
        if j < len(layers) and isinstance(layers[j], ReLU):
            j += 1
        per_channel = 1
        if j < len(layers) and isinstance(layers[j], Flatten):
            shape = outs[i]
            per_channel = int(np.prod(shape[1:])) if len(shape) > 1 else 1
            j += 1
        if j >= len(layers) or not isinstance(layers[j], _Affine):
            continue
        if isinstance(layers[j], Conv2D) and per_channel != 1:
            continue
        if any(i <= b < j or i < a <= j for a, b in net.skips):
            continue
        groups[i] = ChannelGroup(i, bn, j, per_channel)
    return groups


def _bn_following(net: Network, i: int):
    j = i + 1
    if j < len(net.layers) and isinstance(net.layers[j], BatchNorm):
        return j
    return None


# ---------------------------------------------------------------------- scores
def lamp_scores(w: np.ndarray) -> np.ndarray:
    """LAMP: w_i^2 / sum of w_j^2 over weights at least as large (ascending order, stable)."""
    flat = np.asarray(w, dtype=np.float64).ravel() ** 2
    order = np.argsort(flat, kind="stable")
    sorted_sq = flat[order]
    tail = np.cumsum(sorted_sq[::-1])[::-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(tail > 0, sorted_sq / tail, 0.0)
    out = np.empty_like(flat)
    out[order] = s
    return out.reshape(np.shape(w))


def _fisher(net, x, y, chunks=8):
    n = len(x)
    k = max(1, min(chunks, n))
    bounds = np.linspace(0, n, k + 1).astype(int)
    acc = None
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b <= a:
            continue
        _, g = task_grads(net, x[a:b], y[a:b], net.loss, train=False)
        sq = {key: v * v for key, v in g.items()}
        acc = sq if acc is None else {key: acc[key] + sq[key] for key in acc}
    return {key: v / k for key, v in acc.items()}


def importance_scores(net: Network, criterion: ImportanceCriterion, calib=None, structured=False):
    """Non-negative scores per prunable weight, or per output channel when ``structured``.

    ``calib`` is an ``(x, y)`` batch, required for taylor and hessian.
    Unstructured result: ``{(layer, name): array}``; structured: ``{layer: (channels,)}``.
    """
    kind = criterion.kind
    if kind in NEEDS_GRADIENTS and calib is None:
        raise ValueError(f"criterion {kind!r} needs a calibration batch")
    if kind == "bn_scale" and not net.has_batchnorm():
        raise ValueError("bn_scale criterion needs a network with BatchNorm layers")
    keys = weight_tensors(net)
    if kind == "bn_scale":
        keys = [k for k in keys if _bn_following(net, k[0]) is not None]
    grads = None
    if kind == "taylor":
        _, grads = task_grads(net, calib[0], calib[1], net.loss, train=False)
    elif kind == "hessian":
        grads = _fisher(net, calib[0], calib[1])
    scores = {}
    for li, name in keys:
        layer = net.layers[li]
        w = layer.params[name].astype(np.float64)
        if kind == "magnitude":
            s = np.abs(w)
        elif kind == "taylor":
            s = np.abs(w * grads[(li, name)])
        elif kind == "hessian":
            s = 0.5 * w * w * grads[(li, name)]
        elif kind == "lamp":
            s = lamp_scores(w)
        else:
            gamma = np.abs(net.layers[_bn_following(net, li)].params["gamma"].astype(np.float64))
            if name == "V":
                s = np.broadcast_to(gamma.mean(), w.shape).copy()
            else:
                s = np.broadcast_to(gamma.reshape((-1,) + (1,) * (w.ndim - 1)), w.shape).copy()
        scores[(li, name)] = s
    if not structured:
        return scores
    groups = channel_groups(net)
    out = {}
    for li in groups:
        layer = net.layers[li]
        if kind == "bn_scale":
            bn = _bn_following(net, li)
            if bn is None:
                continue
            out[li] = np.abs(net.layers[bn].params["gamma"].astype(np.float64))
        else:
            row = "U" if layer.is_decomposed else "weight"
            s = scores[(li, row)]
            out[li] = s.reshape(s.shape[0], -1).sum(axis=1)
    return out


# ---------------------------------------------------------------------- masks
def _lowest(values: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    keep = np.ones(values.size, dtype=bool)
    keep[order[:k]] = False
    return keep


def build_mask(scores: dict, spec: PruneSpec) -> dict:
    """Binary masks zeroing exactly ``floor(ratio * N)`` lowest scores per scope.

    Ties go to the lower flat index. Unstructured input ``{(layer, name): scores}``
    yields masks of the same keys; structured input ``{layer: channel scores}``
    yields ``{layer: channel keep-vector}``.
    """
    for v in scores.values():
        if not np.all(np.isfinite(v)):
            raise ValueError("scores must be finite")
    keys = list(scores)
    if spec.ratio == 0 or not keys:
        return {k: np.ones(np.shape(scores[k]), dtype=bool) for k in keys}
    if spec.criterion.scope == "layer":
        masks = {}
        for k in keys:
            s = np.asarray(scores[k]).ravel()
            n = s.size
            kk = math.floor(spec.ratio * n)
            if kk >= n:
                warnings.warn(PruningWarning(f"{k}: ratio {spec.ratio} would remove all {n} entries; keeping 1"))
                kk = n - 1
            masks[k] = _lowest(s, kk).reshape(np.shape(scores[k]))
        return masks
    flat = np.concatenate([np.asarray(scores[k]).ravel() for k in keys])
    kk = math.floor(spec.ratio * flat.size)
    keep = _lowest(flat, kk)
    masks, pos = {}, 0
    for k in keys:
        n = np.size(scores[k])
        m = keep[pos:pos + n]
        if spec.structured and not m.any():
            warnings.warn(PruningWarning(f"layer {k}: global pruning removed every channel; keeping the best one"))
            m = m.copy()
            m[int(np.argmax(np.asarray(scores[k]).ravel()))] = True
        masks[k] = m.reshape(np.shape(scores[k]))
        pos += n
    return masks


def _install(layer, name, mask):
    mask = mask.astype(layer.params[name].dtype)
    old = layer.masks.get(name)
    if old is not None:
        mask = mask * old
    layer.masks[name] = mask
    layer.params[name] = layer.params[name] * mask


def apply_mask(net: Network, masks: dict, structured: bool = False) -> Network:
    """Zero pruned entries and install masks (combined with any existing mask), in place."""
    if not structured:
        for (li, name), m in masks.items():
            layer = net.layers[li]
            if layer.params[name].shape != m.shape:
                raise ValueError(f"mask shape {m.shape} does not match {name} of layer {li}")
            _install(layer, name, m)
        return net
    groups = channel_groups(net)
    for li, keep in masks.items():
        g = groups[li]
        layer = net.layers[li]
        keep = np.asarray(keep, dtype=bool)
        row = "U" if layer.is_decomposed else "weight"
        shape = layer.params[row].shape
        _install(layer, row, np.broadcast_to(keep.reshape((-1,) + (1,) * (len(shape) - 1)), shape))
        _install(layer, "bias", keep)
        if g.bn is not None:
            bn = net.layers[g.bn]
            _install(bn, "gamma", keep)
            _install(bn, "beta", keep)
    net.clear_caches()
    return net


def sparsity(net: Network) -> float:
    keys = weight_tensors(net)
    total = sum(net.layers[i].params[n].size for i, n in keys)
    zeros = sum(int(np.sum(net.layers[i].params[n] == 0)) for i, n in keys)
    return zeros / total if total else 0.0


def _removable_channels(net, g: ChannelGroup):
    layer = net.layers[g.layer]
    row = "U" if layer.is_decomposed else "weight"
    wm = layer.masks.get(row)
    bm = layer.masks.get("bias")
    if wm is None or bm is None:
        return None
    dead = (bm == 0) & np.all(wm.reshape(wm.shape[0], -1) == 0, axis=1)
    if g.bn is not None:
        bn = net.layers[g.bn]
        gm, btm = bn.masks.get("gamma"), bn.masks.get("beta")
        if gm is None or btm is None:
            return None
        dead &= (gm == 0) & (btm == 0)
    return dead


def _slice(layer, name, idx, axis):
    for d in (layer.params, layer.buffers, layer.masks):
        if name in d:
            d[name] = np.take(d[name], idx, axis=axis)


def compact(net: Network) -> Network:
    """Physically drop structurally pruned output channels (in place).

    Unstructured masks are left alone: zeros cannot be removed without sparse storage.
    """
    groups = channel_groups(net)
    removed_any = False
    for li in sorted(groups, reverse=True):
        g = groups[li]
        dead = _removable_channels(net, g)
        if dead is None or not dead.any() or dead.all():
            continue
        keep = np.flatnonzero(~dead)
        layer = net.layers[li]
        for name in ("weight", "U", "bias"):
            _slice(layer, name, keep, 0)
        if g.bn is not None:
            bn = net.layers[g.bn]
            for name in ("gamma", "beta", "running_mean", "running_var"):
                _slice(bn, name, keep, 0)
        cons = net.layers[g.consumer]
        if isinstance(cons, Conv2D):
            kh, kw = cons.kernel_size
            if cons.is_decomposed:
                cols = (keep[:, None] * kh * kw + np.arange(kh * kw)).ravel()
                _slice(cons, "V", cols, 0)
            else:
                _slice(cons, "weight", keep, 1)
        else:
            cols = (keep[:, None] * g.per_channel + np.arange(g.per_channel)).ravel()
            if cons.is_decomposed:
                _slice(cons, "V", cols, 0)
            else:
                _slice(cons, "weight", cols, 1)
        removed_any = True
    if not removed_any and any(l.masks for _, l in net.affine_layers()):
        warnings.warn(PruningWarning("compact: no structurally pruned channels; unstructured zeros stay stored"))
    net.clear_caches()
    net.validate()
    return net


def prune(net: Network, spec: PruneSpec, calib=None, do_compact: bool = True) -> Network:
    """Score, mask and (for structured pruning) compact ``net`` in place."""
    if spec.structured and not channel_groups(net):
        warnings.warn(PruningWarning("no structurally prunable layer; falling back to unstructured"))
        spec = PruneSpec(spec.ratio, spec.criterion, False)
    scores = importance_scores(net, spec.criterion, calib, structured=spec.structured)
    masks = build_mask(scores, spec)
    apply_mask(net, masks, structured=spec.structured)
    if spec.structured and do_compact:
        compact(net)
    return net
