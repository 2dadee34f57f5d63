"""Simulated quantization: static/dynamic post-training INT8, quantization-aware training, FP16.

Integer arithmetic is simulated: weights are snapped to the symmetric INT8
grid (values ``q * scale`` kept in float), activations are quantized and
dequantized at layer inputs. INT8 networks are CPU-only; FP16 and float
networks are available on both device profiles.

Table abbreviations ``QS`` and ``QD`` are synonyms of ``PTQ`` and ``PDQ``.
"""

from __future__ import annotations

import numpy as np

from petra.nn.layers import QuantRecord, _Affine
from petra.nn.network import Network
from petra.nn.qmath import QMAX, dequantize, fake_quant, quantize, to_fp16_values  # noqa: F401
from petra.nn.train import TrainResult, train

MODES = ("PTQ", "PDQ", "QAT", "FP16")


def clear_quant(net: Network) -> Network:
    """Drop quantization state; current (grid) values become ordinary floats again."""
    base = "fp64" if net.dtype == np.float64 else "fp32"
    for layer in net.layers:
        layer.quant = None
        layer.fake_quant = False
        layer.precision = base
    return net


def _quantize_weights(net: Network, mode: str, act_ranges=None):
    for i, layer in net.affine_layers():
        scales = {}
        for name, p in layer.params.items():
            q, s = quantize(p)
            layer.params[name] = dequantize(q, s, p.dtype)
            scales[name] = s
        act = None if act_ranges is None else act_ranges[i]
        layer.quant = QuantRecord(mode, "int8", scales, act)
        layer.precision = "int8"
        layer.fake_quant = False
    net.clear_caches()


def calibrate(net: Network, calib_x, n_batches: int = 8, batch_size: int = 64) -> dict:
    """Per affine layer (min, max) of its input over the first ``n_batches`` batches."""
    if calib_x is None or len(calib_x) == 0:
        raise ValueError("empty calibration set")
    ranges = {}

    def observe(i, layer, x):
        if isinstance(layer, _Affine):
            lo, hi = float(np.min(x)), float(np.max(x))
            if i in ranges:
                lo, hi = min(lo, ranges[i][0]), max(hi, ranges[i][1])
            ranges[i] = (lo, hi)

    for b in range(n_batches):
        chunk = calib_x[b * batch_size:(b + 1) * batch_size]
        if len(chunk) == 0:
            break
        net.forward(chunk, observer=observe)
    dt = net.dtype.type
    return {i: (float(dt(lo)), float(dt(hi))) for i, (lo, hi) in ranges.items()}


def apply_ptq(net: Network, calib_x, n_batches: int = 8, batch_size: int = 64) -> Network:
    clear_quant(net)
    ranges = calibrate(net, calib_x, n_batches, batch_size)
    _quantize_weights(net, "PTQ", ranges)
    return net


def apply_pdq(net: Network) -> Network:
    clear_quant(net)
    _quantize_weights(net, "PDQ")
    return net


def qat_train(net: Network, data, epochs: int, optimizer, loss, batch_size=64, rng=None,
              early_stop_hook=None) -> TrainResult:
    """Train with fake-quantized weights (straight-through gradients), then export INT8 weights."""
    clear_quant(net)
    for _, layer in net.affine_layers():
        layer.fake_quant = True
    result = train(net, data, epochs, optimizer, loss, batch_size=batch_size, rng=rng,
                   early_stop_hook=early_stop_hook)
    _quantize_weights(net, "QAT")
    return result


def to_fp16(net: Network) -> Network:
    clear_quant(net)
    for layer in net.layers:
        if not layer.params:
            continue
        for d in (layer.params, layer.buffers):
            for k in d:
                d[k] = to_fp16_values(d[k])
        layer.precision = "fp16"
        layer.quant = QuantRecord("FP16", "fp16")
    net.clear_caches()
    return net


def gpu_available(net: Network) -> bool:
    return not net.is_int8()
