"""Layer zoo: Linear, Conv2D, BatchNorm, ReLU, Flatten.

Each layer owns its parameters as numpy arrays and implements an explicit
``forward``/``backward`` pair; the backward pass writes ``self.grads`` and
returns the gradient with respect to the layer input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from petra.nn import qmath


class NumericError(ArithmeticError):
    """Raised when a NaN or Inf shows up in activations, losses or gradients."""


class ShapeError(ValueError):
    pass


@dataclass
class QuantRecord:
    """Per-layer quantization state.

    ``scales`` maps parameter names to their per-tensor INT8 scale (empty for
    FP16). ``act_range`` holds the calibrated (min, max) of the layer input and
    is only set for static post-training quantization.
    """

    mode: str  # PTQ | PDQ | QAT | FP16
    dtype: str  # int8 | fp16
    scales: dict = field(default_factory=dict)
    act_range: tuple | None = None

    def __post_init__(self):
        if self.mode not in ("PTQ", "PDQ", "QAT", "FP16"):
            raise ValueError(f"unknown quantization mode {self.mode!r}")
        if self.mode == "PTQ" and self.act_range is None:
            raise ValueError("PTQ requires calibrated activation ranges")
        for name, s in self.scales.items():
            if not s > 0:
                raise ValueError(f"scale for {name} must be positive, got {s}")


PRECISION_BYTES = {"fp64": 8, "fp32": 4, "fp16": 2, "int8": 1}


class Layer:
    kind = "Layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.masks: dict[str, np.ndarray] = {}
        self.quant: QuantRecord | None = None
        self.fake_quant = False
        self.precision = "fp32"
        self._cache = None

    def config(self) -> dict:
        return {}

    def forward(self, x, train=False, update_stats=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def clear_cache(self):
        self._cache = None

    def stored_tensors(self):
        """(name, array) pairs that make up the stored model: parameters then buffers."""
        return list(self.params.items()) + list(self.buffers.items())

    def __repr__(self):
        shapes = {k: v.shape for k, v in self.params.items()}
        return f"{self.kind}({shapes})"


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _Affine(Layer):
    """Shared core for layers computing ``x2d @ W.T + b`` on a 2-D view of the input.

    When decomposed, ``W = U diag(S) V^T`` and the forward pass applies the
    factors in sequence; U, S and V are then the trainable parameters.
    """

    QUANTIZABLE = ("weight", "bias", "U", "S", "V")

    @property
    def is_decomposed(self) -> bool:
        return "U" in self.params

    @property
    def rank(self) -> int | None:
        return self.params["S"].shape[0] if self.is_decomposed else None

    @property
    def out_channels(self) -> int:
        return self.params["bias"].shape[0]

    @property
    def weight_names(self) -> tuple:
        """Parameters eligible for pruning and weight regularizers (biases excluded)."""
        return ("U", "V") if self.is_decomposed else ("weight",)

    def weight_matrix(self) -> np.ndarray:
        """Dense (out, fan_in) weight implied by the current parameters."""
        if self.is_decomposed:
            U, S, V = (self.params[k] for k in ("U", "S", "V"))
            return (U * S) @ V.T
        w = self.params["weight"]
        return w.reshape(w.shape[0], -1)

    def _effective(self):
        if not self.fake_quant:
            return dict(self.params), {}
        eff, ste = {}, {}
        for name, p in self.params.items():
            q, s = qmath.quantize(p)
            eff[name] = qmath.dequantize(q, s, p.dtype)
            ste[name] = qmath.ste_mask(p, s)
        return eff, ste

    def _quant_input(self, x):
        rec = self.quant
        if rec is None or rec.dtype != "int8":
            return x
        if rec.mode == "PTQ":
            lo, hi = rec.act_range
            amax = max(abs(lo), abs(hi))
            scale = x.dtype.type(amax / qmath.QMAX) if amax > 0 else x.dtype.type(1.0)
            return qmath.fake_quant(x, scale)
        if rec.mode == "PDQ":
            return qmath.fake_quant(x)
        return x

    def _affine_forward(self, x2d):
        eff, ste = self._effective()
        x2d = self._quant_input(x2d)
        if self.is_decomposed:
            h = x2d @ eff["V"]
            h2 = h * eff["S"]
            y = h2 @ eff["U"].T + eff["bias"]
            self._cache = (x2d, eff, ste, h, h2)
        else:
            w = eff["weight"].reshape(eff["weight"].shape[0], -1)
            y = x2d @ w.T + eff["bias"]
            self._cache = (x2d, eff, ste, None, None)
        return y

    def _affine_backward(self, dy2d):
        x2d, eff, ste, h, h2 = self._cache
        grads = {"bias": dy2d.sum(axis=0)}
        if self.is_decomposed:
            grads["U"] = dy2d.T @ h2
            dh2 = dy2d @ eff["U"]
            grads["S"] = np.sum(dh2 * h, axis=0)
            dh = dh2 * eff["S"]
            grads["V"] = x2d.T @ dh
            dx2d = dh @ eff["V"].T
        else:
            w = eff["weight"]
            w2 = w.reshape(w.shape[0], -1)
            grads["weight"] = (dy2d.T @ x2d).reshape(w.shape)
            dx2d = dy2d @ w2
        for name, m in ste.items():
            grads[name] = grads[name] * m
        self.grads = grads
        return dx2d


class Linear(_Affine):
    kind = "Linear"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = _kaiming_uniform(rng, (out_features, in_features), in_features, dtype)
        bb = 1.0 / np.sqrt(in_features)
        self.params["bias"] = rng.uniform(-bb, bb, size=out_features).astype(dtype)

    @property
    def in_features(self) -> int:
        if self.is_decomposed:
            return self.params["V"].shape[0]
        return self.params["weight"].shape[1]

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_channels}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"Linear expects input ({self.in_features},), got {tuple(in_shape)}")
        return (self.out_channels,)

    def forward(self, x, train=False, update_stats=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"Linear expects (batch, {self.in_features}), got {x.shape}")
        return self._affine_forward(x)

    def backward(self, dy):
        return self._affine_backward(dy)


def _pair(v):
    return (v, v) if np.isscalar(v) else tuple(int(a) for a in v)


class Conv2D(_Affine):
    kind = "Conv2D"

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0,
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel_size = _pair(kernel_size)
        self.stride = _pair(stride)
        self.padding = _pair(padding)
        kh, kw = self.kernel_size
        fan_in = in_channels * kh * kw
        self.params["weight"] = _kaiming_uniform(rng, (out_channels, in_channels, kh, kw), fan_in, dtype)
        bb = 1.0 / np.sqrt(fan_in)
        self.params["bias"] = rng.uniform(-bb, bb, size=out_channels).astype(dtype)
        self._in_channels = in_channels

    @property
    def in_channels(self) -> int:
        if self.is_decomposed:
            kh, kw = self.kernel_size
            return self.params["V"].shape[0] // (kh * kw)
        return self.params["weight"].shape[1]

    def config(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": list(self.kernel_size),
            "stride": list(self.stride),
            "padding": list(self.padding),
        }

    def _out_hw(self, h, w):
        kh, kw = self.kernel_size
        sh, sw = self.stride
        ph, pw = self.padding
        return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"Conv2D expects ({self.in_channels}, H, W), got {tuple(in_shape)}")
        oh, ow = self._out_hw(in_shape[1], in_shape[2])
        if oh < 1 or ow < 1:
            raise ShapeError(f"Conv2D kernel larger than padded input {tuple(in_shape)}")
        return (self.out_channels, oh, ow)

    def _im2col(self, x):
        kh, kw = self.kernel_size
        sh, sw = self.stride
        ph, pw = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
        b, c, oh, ow = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
        return cols, (b, c, oh, ow), xp.shape

    def forward(self, x, train=False, update_stats=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"Conv2D expects (batch, {self.in_channels}, H, W), got {x.shape}")
        cols, (b, _, oh, ow), xp_shape = self._im2col(x)
        y2d = self._affine_forward(cols)
        self._geom = (b, oh, ow, xp_shape)
        return y2d.reshape(b, oh, ow, -1).transpose(0, 3, 1, 2)

    def backward(self, dy):
        b, oh, ow, xp_shape = self._geom
        dy2d = dy.transpose(0, 2, 3, 1).reshape(b * oh * ow, -1)
        dcols = self._affine_backward(dy2d)
        kh, kw = self.kernel_size
        sh, sw = self.stride
        ph, pw = self.padding
        c = xp_shape[1]
        d = dcols.reshape(b, oh, ow, c, kh, kw)
        dxp = np.zeros(xp_shape, dtype=dcols.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh * (oh - 1) + 1:sh, j:j + sw * (ow - 1) + 1:sw] += (
                    d[:, :, :, :, i, j].transpose(0, 3, 1, 2))
        return dxp[:, :, ph:xp_shape[2] - ph, pw:xp_shape[3] - pw]


class BatchNorm(Layer):
    kind = "BatchNorm"

    def __init__(self, num_features, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(num_features, dtype=dtype)
        self.params["beta"] = np.zeros(num_features, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(num_features, dtype=dtype)
        self.buffers["running_var"] = np.ones(num_features, dtype=dtype)

    @property
    def num_features(self) -> int:
        return self.params["gamma"].shape[0]

    def config(self):
        return {"num_features": self.num_features, "momentum": self.momentum, "eps": self.eps}

    def output_shape(self, in_shape):
        if in_shape[0] != self.num_features:
            raise ShapeError(f"BatchNorm expects {self.num_features} channels, got {tuple(in_shape)}")
        return tuple(in_shape)

    def _view(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, train=False, update_stats=False):
        if x.shape[1] != self.num_features:
            raise ShapeError(f"BatchNorm expects {self.num_features} channels, got {x.shape}")
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        g = self._view(self.params["gamma"], x.ndim)
        b = self._view(self.params["beta"], x.ndim)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if update_stats:
                n = x.size // self.num_features
                m = self.momentum
                unbiased = var * n / max(n - 1, 1)
                self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
                self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * unbiased).astype(x.dtype)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._view(mean, x.ndim)) * self._view(inv_std, x.ndim)
        self._cache = (xhat, inv_std, axes, train)
        return (g * xhat + b).astype(x.dtype)

    def backward(self, dy):
        xhat, inv_std, axes, train = self._cache
        nd = dy.ndim
        self.grads = {"gamma": np.sum(dy * xhat, axis=axes), "beta": np.sum(dy, axis=axes)}
        dxhat = dy * self._view(self.params["gamma"], nd)
        istd = self._view(inv_std, nd)
        if not train:
            return dxhat * istd
        n = dy.size // self.num_features
        s1 = self._view(np.sum(dxhat, axis=axes), nd)
        s2 = self._view(np.sum(dxhat * xhat, axis=axes), nd)
        return istd / n * (n * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, train=False, update_stats=False):
        self._cache = x > 0
        return np.where(self._cache, x, 0).astype(x.dtype)

    def backward(self, dy):
        return dy * self._cache


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, update_stats=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cache)


LAYER_KINDS = {cls.kind: cls for cls in (Linear, Conv2D, BatchNorm, ReLU, Flatten)}


def layer_from_config(kind: str, cfg: dict, dtype=np.float32) -> Layer:
    """Instantiate an empty layer of ``kind``; parameters are overwritten by the caller."""
    if kind == "Linear":
        return Linear(cfg["in_features"], cfg["out_features"], dtype=dtype)
    if kind == "Conv2D":
        return Conv2D(cfg["in_channels"], cfg["out_channels"], cfg["kernel_size"],
                      cfg["stride"], cfg["padding"], dtype=dtype)
    if kind == "BatchNorm":
        return BatchNorm(cfg["num_features"], cfg.get("momentum", 0.1), cfg.get("eps", 1e-5), dtype=dtype)
    if kind in ("ReLU", "Flatten"):
        return LAYER_KINDS[kind]()
    raise ValueError(f"unknown layer kind {kind!r}")
