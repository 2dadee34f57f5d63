"""Symmetric per-tensor INT8 arithmetic shared by layers and the quantization passes."""

import numpy as np

QMAX = 127


def int8_scale(t: np.ndarray) -> np.ndarray:
    """Per-tensor scale ``max|t| / 127`` in the tensor's dtype; 1 for an all-zero tensor."""
    amax = np.max(np.abs(t)) if t.size else 0.0
    if amax == 0:
        return t.dtype.type(1.0)
    return t.dtype.type(amax) / t.dtype.type(QMAX)


def quantize(t: np.ndarray, scale=None):
    """Return ``(q, scale)`` with ``q`` int8 in [-127, 127], rounded half to even."""
    t = np.asarray(t)
    if scale is None:
        scale = int8_scale(t)
    scale = t.dtype.type(scale)
    q = np.clip(np.rint(t / scale), -QMAX, QMAX).astype(np.int8)
    return q, scale


def dequantize(q: np.ndarray, scale, dtype=np.float32) -> np.ndarray:
    dtype = np.dtype(dtype)
    return q.astype(dtype) * dtype.type(scale)


def fake_quant(t: np.ndarray, scale=None) -> np.ndarray:
    q, s = quantize(t, scale)
    return dequantize(q, s, t.dtype)


def ste_mask(t: np.ndarray, scale) -> np.ndarray:
    """Straight-through window: 1 where the value lies inside the clamp range."""
    return (np.abs(t) <= scale * QMAX).astype(t.dtype)


def to_fp16_values(t: np.ndarray) -> np.ndarray:
    return t.astype(np.float16).astype(t.dtype)
