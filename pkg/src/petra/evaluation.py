"""Quality, computational and structural metrics, and their objective-space image.

Two timing modes:

* ``measured``: wall-clock medians of real forward passes (default for CLI runs)
* ``modeled``: a deterministic cost model driven by multiply-accumulate counts,
  used when a run must be bit-reproducible

The "gpu" profile is a named measurement profile, not hardware: in measured
mode it runs the batch as one vectorized call while the "cpu" profile walks
the batch in small chunks. INT8 networks are unavailable on the gpu profile.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from petra import metrics
from petra.nn.layers import BatchNorm, Conv2D, Linear, _Affine
from petra.nn.losses import scores_from_output
from petra.nn.network import Network

UNAVAILABLE = None
INFINITY = "∞"
MB = 2 ** 20
IMPUTE_EPS = 1e-6

AXES = ("quality", "cpu_latency", "gpu_latency", "cpu_throughput", "gpu_throughput", "size", "depth",
        "train_seconds")
# Four axes keep the hypervolume exact; throughput is still measured and reported.
DEFAULT_AXES = ("quality", "cpu_latency", "gpu_latency", "size")
REPORT_AXES = ("quality", "cpu_latency", "gpu_latency", "cpu_throughput", "gpu_throughput", "size")
_FIELD = {"quality": "quality", "cpu_latency": "cpu_latency_ms", "gpu_latency": "gpu_latency_ms",
          "cpu_throughput": "cpu_throughput_ips", "gpu_throughput": "gpu_throughput_ips",
          "size": "size_mb", "depth": "depth", "train_seconds": "train_seconds"}
_SIGN = {"cpu_latency": -1, "gpu_latency": -1, "cpu_throughput": 1, "gpu_throughput": 1,
         "size": -1, "depth": -1, "train_seconds": -1}


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    chunk: int  # items per forward call in measured throughput runs (0 = whole batch)
    ns_per_mac: float  # modeled cost per multiply-accumulate
    layer_overhead_us: float  # modeled fixed cost per layer call
    precision_factor: tuple  # modeled cost multiplier per storage precision
    supports_int8: bool

    def factor(self, precision: str) -> float:
        return dict(self.precision_factor)[precision]


PROFILES = {
    "cpu": DeviceProfile("cpu", chunk=8, ns_per_mac=0.5, layer_overhead_us=4.0,
                         precision_factor=(("fp64", 2.0), ("fp32", 1.0), ("fp16", 1.25), ("int8", 0.5)),
                         supports_int8=True),
    "gpu": DeviceProfile("gpu", chunk=0, ns_per_mac=0.02, layer_overhead_us=15.0,
                         precision_factor=(("fp64", 4.0), ("fp32", 1.0), ("fp16", 0.5), ("int8", 1.0)),
                         supports_int8=False),
}


@dataclass
class MetricVector:
    quality: float
    quality_name: str
    cpu_latency_ms: float | None
    gpu_latency_ms: float | None
    cpu_throughput_ips: float | None
    gpu_throughput_ips: float | None
    size_mb: float
    depth: int
    train_seconds: float
    partial: bool = False
    extra: dict = field(default_factory=dict)

    def value(self, axis: str):
        return getattr(self, _FIELD[axis])

    def available(self, axis: str) -> bool:
        return self.value(axis) is not None

    def to_json(self) -> dict:
        d = asdict(self)
        d["available"] = {a: self.available(a) for a in AXES}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "MetricVector":
        d = {k: v for k, v in d.items() if k != "available"}
        return cls(**d)


# ------------------------------------------------------------------ timing
class MeasurementToken:
    """Serializes timing: at most one measurement runs per process at a time."""

    def __init__(self):
        self._lock = threading.Lock()

    def __enter__(self):
        self._lock.acquire()
        return self

    def __exit__(self, *exc):
        self._lock.release()


TOKEN = MeasurementToken()


def available_on(net: Network, profile: DeviceProfile) -> bool:
    return profile.supports_int8 or not net.is_int8()


def _forward(net, x, chunk):
    if chunk and len(x) > chunk:
        for i in range(0, len(x), chunk):
            net.forward(x[i:i + chunk])
    else:
        net.forward(x)


def measure_latency(net: Network, profile: DeviceProfile, sample: np.ndarray, repeats: int = 30,
                    warmup: int = 5):
    """Median wall-clock milliseconds of single-item forwards, or None when unavailable."""
    if not available_on(net, profile):
        return UNAVAILABLE
    x = sample[:1]
    with TOKEN:
        for _ in range(warmup):
            net.forward(x)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            net.forward(x)
            times.append(time.perf_counter() - t0)
    return float(np.median(times) * 1e3)


def measure_throughput(net: Network, profile: DeviceProfile, sample: np.ndarray, batch: int = 64,
                       n_batches: int = 10):
    """Items per second over ``n_batches`` forwards of ``batch`` items, or None when unavailable."""
    if not available_on(net, profile):
        return UNAVAILABLE
    reps = int(math.ceil(batch / len(sample)))
    x = np.concatenate([sample] * reps)[:batch]
    with TOKEN:
        _forward(net, x, profile.chunk)
        t0 = time.perf_counter()
        for _ in range(n_batches):
            _forward(net, x, profile.chunk)
        dt = time.perf_counter() - t0
    return float(batch * n_batches / max(dt, 1e-12))


def layer_costs(net: Network):
    """Per layer ``(macs per item, input elements per item, precision)``."""
    out = []
    ins, outs = net.shapes()
    for i, layer in enumerate(net.layers):
        in_elems = int(np.prod(ins[i]))
        out_elems = int(np.prod(outs[i]))
        if isinstance(layer, _Affine):
            if isinstance(layer, Conv2D):
                positions = int(np.prod(outs[i][1:]))
            else:
                positions = 1
            if layer.is_decomposed:
                m, n = layer.params["U"].shape[0], layer.params["V"].shape[0]
                macs = positions * layer.rank * (m + n + 1)
            else:
                w = layer.params["weight"]
                macs = positions * int(np.prod(w.shape))
        elif isinstance(layer, BatchNorm):
            macs = 2 * out_elems
        else:
            macs = out_elems // 2  # elementwise pass, counted at half a MAC per element
        out.append((macs, in_elems, layer.precision))
    return out


def _modeled_seconds(net: Network, profile: DeviceProfile, items: int) -> float:
    us = 0.0
    for layer, (macs, in_elems, prec) in zip(net.layers, layer_costs(net)):
        us += profile.layer_overhead_us
        us += items * macs * profile.ns_per_mac * profile.factor(prec) / 1e3
        rec = layer.quant
        if rec is not None and rec.dtype == "int8" and isinstance(layer, (Linear, Conv2D)):
            # activation quantize/dequantize; the dynamic mode also scans for the range
            per = 2.0 if rec.mode == "PDQ" else 1.0
            us += items * in_elems * per * profile.ns_per_mac / 1e3
    return us / 1e6


def modeled_latency(net, profile):
    if not available_on(net, profile):
        return UNAVAILABLE
    return _modeled_seconds(net, profile, 1) * 1e3


def modeled_throughput(net, profile, batch: int = 64):
    if not available_on(net, profile):
        return UNAVAILABLE
    return batch / _modeled_seconds(net, profile, batch)


def modeled_train_seconds(net: Network, epochs_run: int, n_train: int) -> float:
    """Forward plus backward (three times the forward MACs) on the cpu profile."""
    return epochs_run * 3.0 * _modeled_seconds(net, PROFILES["cpu"], n_train)


# ------------------------------------------------------------------ evaluate
def quality_of(net: Network, x, y) -> float:
    out = net.predict(x)
    return metrics.quality(net.task.kind, scores_from_output(net.task.kind, out), y)


def evaluate(net: Network, data, depth: int = 0, train_seconds: float = 0.0, devices=("cpu", "gpu"),
             timing: str = "measured", partial: bool = False, split: str = "val",
             latency_repeats: int = 30, latency_warmup: int = 5, batch: int = 64, n_batches: int = 10,
             epochs_run: int = 0) -> MetricVector:
    """Full metric vector of ``net``; unknown or unavailable devices give None entries."""
    if timing not in ("measured", "modeled"):
        raise ValueError(f"unknown timing mode {timing!r}")
    x, y = getattr(data, f"x_{split}"), getattr(data, f"y_{split}")
    q = quality_of(net, x, y)
    vals = {}
    for dev in ("cpu", "gpu"):
        prof = PROFILES[dev]
        if dev not in devices:
            vals[dev] = (UNAVAILABLE, UNAVAILABLE)
        elif timing == "modeled":
            vals[dev] = (modeled_latency(net, prof), modeled_throughput(net, prof, batch))
        else:
            vals[dev] = (measure_latency(net, prof, x, latency_repeats, latency_warmup),
                         measure_throughput(net, prof, x, batch, n_batches))
    if timing == "modeled":
        train_seconds = modeled_train_seconds(net, epochs_run, len(data.x_train))
    net.clear_caches()
    return MetricVector(
        quality=float(q), quality_name=net.task.quality_name,
        cpu_latency_ms=vals["cpu"][0], gpu_latency_ms=vals["gpu"][0],
        cpu_throughput_ips=vals["cpu"][1], gpu_throughput_ips=vals["gpu"][1],
        size_mb=net.model_size_bytes() / MB, depth=int(depth), train_seconds=float(train_seconds),
        partial=partial,
    )


# ------------------------------------------------------------------ objectives
def raw_objectives(m: MetricVector, axes, task_kind: str) -> list:
    """Maximization-aligned values; None marks an unavailable axis awaiting imputation."""
    if not axes:
        raise ValueError("empty objective axis set")
    out = []
    for a in axes:
        if a not in _FIELD:
            raise ValueError(f"unknown objective axis {a!r}")
        v = m.value(a)
        if v is None:
            out.append(None)
        elif a == "quality":
            out.append(float(metrics.oriented(task_kind, v)))
        else:
            out.append(float(_SIGN[a] * v))
    return out


def impute(vectors, worst=None, eps: float = IMPUTE_EPS) -> list:
    """Fill None entries with (worst available value on that axis) - eps.

    ``worst`` optionally supplies per-axis worst values from earlier
    generations; the minimum over it and ``vectors`` is used.
    """
    vectors = [list(v) for v in vectors]
    if not vectors:
        return vectors
    d = len(vectors[0])
    low = list(worst) if worst is not None else [None] * d
    for v in vectors:
        for j, x in enumerate(v):
            if x is not None and (low[j] is None or x < low[j]):
                low[j] = x
    for v in vectors:
        for j, x in enumerate(v):
            if x is None:
                v[j] = (low[j] if low[j] is not None else 0.0) - eps
    return vectors


def to_objectives(m: MetricVector, axes, task_kind: str, worst=None, eps: float = IMPUTE_EPS) -> list:
    """Objective vector of one individual, imputing against per-axis ``worst`` values."""
    raw = raw_objectives(m, axes, task_kind)
    return impute([raw], worst, eps)[0]


# ------------------------------------------------------------------ percent change
def percent_change(original, candidate):
    """``100 * (candidate - original) / original``, or None when undefined."""
    if original is None or candidate is None or original == 0:
        return None
    return 100.0 * (candidate - original) / original


def format_percent(p) -> str:
    if p is None:
        return INFINITY
    r = round(p, 1)
    if r == 0:
        return "+0.0%"
    return f"{r:+.1f}%"


def percent_changes(original: MetricVector, candidate: MetricVector, axes=REPORT_AXES) -> dict:
    return {a: percent_change(original.value(a), candidate.value(a)) for a in axes}
