"""Apply a pipeline to a base network, stage by stage, with prefix checkpoint reuse.

Every stage draws its randomness from a stream keyed by the pipeline prefix
that ends at it, so executing ``A - B - C`` from scratch and resuming ``C`` from
a cached ``A - B`` checkpoint give bit-identical networks.
"""

from __future__ import annotations

import time
import warnings
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from petra import decomposition, pruning, quantization
from petra.nn.layers import NumericError, ShapeError
from petra.nn.network import Network
from petra.nn.optim import Optimizer
from petra.nn.train import train, validation_score
from petra.pipeline import Pipeline
from petra.regularizers import CompositeLoss
from petra.rng import make_rng

STAGE_ERRORS = (NumericError, ShapeError, decomposition.DecompositionError, ValueError,
                FloatingPointError, np.linalg.LinAlgError)


@dataclass
class StageRecord:
    index: int
    kind: str
    label: str
    status: str  # ok | stopped-early | failed
    size_bytes: int | None = None
    score: float | None = None  # validation quality, higher is better
    epochs: list = field(default_factory=list)  # per-epoch validation trace of training stages
    seconds: float = 0.0
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "StageRecord":
        return cls(**d)


@dataclass
class ExecResult:
    net: Network | None
    records: list
    status: str  # ok | stopped-early | failed
    failed_stage: int | None = None
    error: str | None = None
    reused_stages: int = 0

    @property
    def epochs_run(self) -> int:
        return sum(len(r.epochs) for r in self.records)


class StageCache:
    """In-memory prefix cache: ``(prefix key, seed) -> (network, records)``.

    Eviction only costs recomputation, never changes results, so a plain
    insertion-order cap is enough.
    """

    def __init__(self, max_entries: int = 512):
        self.max_entries = max_entries
        self._d: OrderedDict = OrderedDict()
        self.new_keys: list = []

    def __contains__(self, key):
        return key in self._d

    def __len__(self):
        return len(self._d)

    def get(self, key):
        net, records = self._d[key]
        return net.copy(), [StageRecord(**asdict(r)) for r in records]

    def put(self, key, net: Network, records):
        if key in self._d:
            return
        self._d[key] = (net.copy(), [StageRecord(**asdict(r)) for r in records])
        self.new_keys.append(key)
        while len(self._d) > self.max_entries:
            self._d.popitem(last=False)

    def subset(self, keys) -> "StageCache":
        out = StageCache(self.max_entries)
        for k in keys:
            if k in self._d:
                out._d[k] = self._d[k]
        return out

    def fresh_entries(self) -> dict:
        return {k: self._d[k] for k in self.new_keys if k in self._d}

    def merge(self, entries: dict):
        for k in sorted(entries):
            net, records = entries[k]
            self.put(k, net, records)


def prefix_keys(p: Pipeline, seed: int) -> list:
    return [(p.key(i + 1), int(seed)) for i in range(len(p.stages))]


def _hook_aborts(hook, trace) -> bool:
    """Replay an early-stop hook over a finished epoch trace."""
    return any(hook(trace[:e]) for e in range(1, len(trace) + 1))


def reusable_prefix(p: Pipeline, seed: int, cache: StageCache | None, early_stop=None) -> int:
    """Number of leading stages that can be taken from ``cache`` under ``early_stop``."""
    if cache is None:
        return 0
    keys = prefix_keys(p, seed)
    n = 0
    for i, key in enumerate(keys):
        if key not in cache:
            break
        _, records = cache._d[key]
        last = records[i]
        if early_stop is not None and last.epochs and _hook_aborts(early_stop, last.epochs):
            break
        n = i + 1
    return n


def _optimizer(model_hp: dict, lr_scale: float) -> Optimizer:
    return Optimizer(model_hp["optimizer"], model_hp["learning_rate"] * lr_scale)


def _composite(kind: str, hp: dict, base: str) -> CompositeLoss:
    if kind != "Reg":
        return CompositeLoss(base=base)
    return CompositeLoss(
        base=base,
        lambda_o=hp["lambda_o"], lambda_h=hp["lambda_h"],
        l1=hp["l1_weight"] if hp["l1"] else 0.0,
        lai=hp["lai_weight"] if hp["lai"] else 0.0, lai_tau=hp["lai_tau"],
        norm=hp["norm_weight"] if hp["norm"] else 0.0,
    )


def run_stage(net: Network, node, model_hp: dict, data, rng, early_stop=None, calib_size: int = 256):
    """Apply one stage in place. Returns ``(epoch trace, stopped_early)``."""
    kind, hp = node.kind, node.hp
    if kind in ("Tr", "Reg"):
        quantization.clear_quant(net)
        res = train(net, data, hp["epochs"], _optimizer(model_hp, hp["lr_scale"]),
                    _composite(kind, hp, model_hp["loss"]), batch_size=model_hp["batch_size"],
                    rng=rng, early_stop_hook=early_stop)
        return res.trace, res.stopped_early
    if kind == "QAT":
        res = quantization.qat_train(net, data, hp["epochs"], _optimizer(model_hp, hp["lr_scale"]),
                                     CompositeLoss(base=model_hp["loss"]), batch_size=model_hp["batch_size"],
                                     rng=rng, early_stop_hook=early_stop)
        return res.trace, res.stopped_early
    if kind == "LR":
        quantization.clear_quant(net)
        decomposition.decompose_network(net, decomposition.RankCriterion(hp["criterion"], hp["threshold"]))
    elif kind == "Pr":
        spec = pruning.PruneSpec(hp["ratio"], pruning.ImportanceCriterion(hp["criterion"], hp["scope"]),
                                 hp["structured"])
        calib = (data.x_train[:calib_size], data.y_train[:calib_size])
        pruning.prune(net, spec, calib, do_compact=hp["compact"])
    elif kind == "PTQ":
        quantization.apply_ptq(net, data.x_train, n_batches=hp["calib_batches"])
    elif kind == "PDQ":
        quantization.apply_pdq(net)
    elif kind == "FP16":
        quantization.to_fp16(net)
    return [], False


def execute(p: Pipeline, base: Network, data, seed: int, cache: StageCache | None = None,
            early_stop=None, calib_size: int = 256) -> ExecResult:
    """Run ``p`` on a copy of ``base``.

    A stage error stops execution and marks that stage failed; an early-stop
    abort keeps the best-so-far network and skips the remaining stages.
    """
    model_hp = p.model_hp(base.task.kind)
    keys = prefix_keys(p, seed)
    start = reusable_prefix(p, seed, cache, early_stop)
    if start:
        net, records = cache.get(keys[start - 1])
    else:
        net, records = base.copy(), []
        net.loss = model_hp["loss"]
    for i in range(start, len(p.stages)):
        node = p.stages[i]
        rec = StageRecord(i, node.kind, node.label or node.kind, "ok")
        rng = make_rng(seed, "stage", keys[i][0])
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings(record=True) as caught, np.errstate(all="ignore"):
                warnings.simplefilter("always")
                trace, stopped = run_stage(net, node, model_hp, data, rng, early_stop, calib_size)
                rec.epochs = [float(v) for v in trace]
                rec.score = float(validation_score(net, data.x_val, data.y_val))
            rec.notes = [str(w.message) for w in caught if issubclass(w.category, pruning.PruningWarning)]
            rec.size_bytes = net.model_size_bytes()
        except STAGE_ERRORS as exc:
            rec.status = "failed"
            rec.seconds = time.perf_counter() - t0
            records.append(rec)
            return ExecResult(None, records, "failed", failed_stage=i,
                              error=f"{type(exc).__name__}: {exc}", reused_stages=start)
        rec.seconds = time.perf_counter() - t0
        records.append(rec)
        if stopped:
            rec.status = "stopped-early"
            return ExecResult(net, records, "stopped-early", reused_stages=start)
        if cache is not None:
            cache.put(keys[i], net, records)
    net.clear_caches()
    return ExecResult(net, records, "ok", reused_stages=start)


__all__ = ["StageRecord", "ExecResult", "StageCache", "execute", "run_stage", "reusable_prefix",
           "prefix_keys", "STAGE_ERRORS"]
