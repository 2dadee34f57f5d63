"""Run orchestration and the run-directory layout.

::

    <run>/config.json            resolved configuration
    <run>/config.sha256          digest checked on resume
    <run>/base/model.ptra        base network (trained in pretrained mode)
    <run>/base/metrics.json      metrics of the base network ("Original" row)
    <run>/state.json             full search state at the last generation barrier
    <run>/history.jsonl          one line per generation
    <run>/individuals/<id>/      pipeline.json, metrics.json, model.ptra
    <run>/archive/manifest.json  current Pareto members
    <run>/summary.json           written when a stopping criterion fires
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from petra import config as cfgmod
from petra import data as datamod
from petra import evaluation
from petra.evolution import EvalSettings, Search
from petra.nn import checkpoint
from petra.nn.models import ARCHITECTURES
from petra.nn.network import Network, Task
from petra.nn.optim import Optimizer
from petra.nn.train import train
from petra.regularizers import CompositeLoss
from petra.rng import make_rng
from petra.stages import model_defaults


class RunError(RuntimeError):
    pass


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))
    os.replace(tmp, path)


def _read_json(path: Path):
    return json.loads(Path(path).read_text())


# ------------------------------------------------------------------ building blocks
def load_data(cfg: cfgmod.RunConfig) -> datamod.Dataset:
    t = cfg.task
    seed = cfg.evolution.seed
    name = t.synthetic_name
    if name is not None:
        return datamod.synthetic(name, t.n_samples, seed=seed, **t.generator)
    return datamod.load_dataset(t.dataset, t.format, t.kind, seed=seed, fractions=tuple(t.split))


def task_of(cfg: cfgmod.RunConfig) -> Task:
    if cfg.task.kind == "multiclass":
        return Task("multiclass", cfg.model.n_classes)
    return Task(cfg.task.kind)


def build_model(cfg: cfgmod.RunConfig, input_shape) -> Network:
    m = cfg.model
    task = task_of(cfg)
    rng = make_rng(cfg.evolution.seed, "init")
    try:
        if m.arch == "mlp":
            if len(input_shape) != 1:
                raise cfgmod.ConfigError(f"mlp needs flat features, dataset has shape {input_shape}")
            return ARCHITECTURES["mlp"](input_shape[0], tuple(m.hidden), task, rng=rng, batchnorm=m.batchnorm)
        if m.arch == "tiny_resnet":
            return ARCHITECTURES["tiny_resnet"](tuple(input_shape), m.width, task, rng=rng)
        if len(input_shape) != 3 or input_shape[:2] != (1, 1):
            raise cfgmod.ConfigError(f"tiny_tcn needs (1, 1, T) series, dataset has shape {input_shape}")
        return ARCHITECTURES["tiny_tcn"](input_shape[2], m.width, task=task, rng=rng)
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from exc


def prepare_base(cfg: cfgmod.RunConfig, data) -> Network:
    net = build_model(cfg, data.input_shape)
    if cfg.evolution.init_mode == "pretrained" and cfg.model.base_epochs > 0:
        hp = model_defaults(net.task.kind)
        train(net, data, cfg.model.base_epochs, Optimizer(hp["optimizer"], hp["learning_rate"]),
              CompositeLoss(base=hp["loss"]), batch_size=hp["batch_size"],
              rng=make_rng(cfg.evolution.seed, "base-train"))
    return net


def settings_of(cfg: cfgmod.RunConfig) -> EvalSettings:
    e = cfg.evaluation
    return EvalSettings(task_kind=cfg.task.kind, axes=tuple(e.axes), devices=tuple(e.devices), timing=e.timing,
                        latency_repeats=e.latency_repeats, latency_warmup=e.latency_warmup,
                        throughput_batch=e.throughput_batch, throughput_batches=e.throughput_batches)


def evaluate_net(net: Network, data, cfg: cfgmod.RunConfig, depth=0) -> evaluation.MetricVector:
    s = settings_of(cfg)
    return evaluation.evaluate(net, data, depth=depth, devices=s.devices, timing=s.timing,
                               latency_repeats=s.latency_repeats, latency_warmup=s.latency_warmup,
                               batch=s.throughput_batch, n_batches=s.throughput_batches)


# ------------------------------------------------------------------ store
class RunStore:
    def __init__(self, root):
        self.root = Path(root)

    def write_model(self, ind, net: Network):
        d = self.root / "individuals" / ind.id
        d.mkdir(parents=True, exist_ok=True)
        checkpoint.save(net, d / "model.ptra")

    def write_generation(self, search: Search):
        for ind in search.individuals.values():
            if ind.generation != search.generation:
                continue
            d = self.root / "individuals" / ind.id
            _write_json(d / "pipeline.json", ind.pipeline.to_json())
            _write_json(d / "metrics.json", ind.to_json())
        lines = "".join(json.dumps(h, sort_keys=True) + "\n" for h in search.history)
        (self.root / "history.jsonl").write_text(lines)
        _write_json(self.root / "archive" / "manifest.json", {
            "generation": search.generation,
            "members": [{"id": i, "pipeline": str(search.individuals[i].pipeline),
                         "model": f"individuals/{i}/model.ptra"} for i in search.archive.ids],
        })
        _write_json(self.root / "state.json", search.to_state())
        if search.stop_reason is not None:
            res = search.result()
            _write_json(self.root / "summary.json", {
                "stop_reason": res["stop_reason"],
                "generations": search.generation,
                "archive": [{"id": i.id, "pipeline": str(i.pipeline)} for i in res["archive"]],
                "hypervolume_final_reference": res["hypervolume_final_reference"],
                "reference_point": res["reference_point"],
                "evaluated": len(search.individuals),
            })


def _base_id(blob: bytes) -> str:
    return "base-" + hashlib.sha256(blob).hexdigest()[:12]


def start(cfg: cfgmod.RunConfig, on_generation=None, workers=None):
    """Create a run directory and run the search. Returns ``(search, result or None)``."""
    root = Path(cfg.output_dir)
    if (root / "state.json").exists():
        raise RunError(f"{root} already holds a run; use resume")
    root.mkdir(parents=True, exist_ok=True)
    _write_json(root / "config.json", cfg.to_dict())
    (root / "config.sha256").write_text(cfg.digest() + "\n")
    data = load_data(cfg)
    base = prepare_base(cfg, data)
    blob = checkpoint.dumps(base)
    (root / "base").mkdir(exist_ok=True)
    (root / "base" / "model.ptra").write_bytes(blob)
    _write_json(root / "base" / "metrics.json", evaluate_net(base, data, cfg).to_json())
    base = checkpoint.loads(blob)  # same object a resumed run starts from
    search = Search(cfg.evolution, base, data, settings_of(cfg), base_id=_base_id(blob), store=RunStore(root),
                    workers=workers)
    return search, search.run(on_generation)


def resume(run_dir, on_generation=None, workers=None):
    root = Path(run_dir)
    for need in ("config.json", "config.sha256", "state.json", "base/model.ptra"):
        if not (root / need).exists():
            raise RunError(f"{root}: missing {need}, not a resumable run directory")
    cfg = cfgmod.from_dict(_read_json(root / "config.json"))
    if cfg.digest() != (root / "config.sha256").read_text().strip():
        raise RunError(f"{root}: config.json does not match its recorded hash; refusing to resume")
    data = load_data(cfg)
    blob = (root / "base" / "model.ptra").read_bytes()
    base = checkpoint.loads(blob)
    search = Search(cfg.evolution, base, data, settings_of(cfg), base_id=_base_id(blob), store=RunStore(root),
                    workers=workers)
    search.load_state(_read_json(root / "state.json"))
    return search, search.run(on_generation)


def load_run(run_dir) -> dict:
    """Config, base metrics and individuals of a (possibly partial) run."""
    root = Path(run_dir)
    if not (root / "state.json").exists():
        raise RunError(f"{root}: no state.json, not a run directory")
    state = _read_json(root / "state.json")
    return {
        "config": cfgmod.from_dict(_read_json(root / "config.json")),
        "base": evaluation.MetricVector.from_json(_read_json(root / "base" / "metrics.json")),
        "state": state,
        "individuals": {d["id"]: d for d in state["individuals"]},
    }


def eval_checkpoint(ckpt_path, data_path, fmt: str | None = None, seed: int = 0, timing: str = "measured",
                    split: str = "test") -> evaluation.MetricVector:
    """Metrics of a saved network on the seeded ``split`` of a data file."""
    try:
        net = checkpoint.load(ckpt_path)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise RunError(f"cannot load checkpoint {ckpt_path}: {exc}") from exc
    if fmt is None:
        if str(data_path).endswith(".pimg"):
            fmt = "image"
        else:
            fmt = "timeseries" if len(net.input_shape) == 3 else "tabular"
    data = datamod.load_dataset(data_path, fmt, net.task.kind, seed=seed)
    if data.input_shape != net.input_shape:
        raise datamod.DataError(f"data shape {data.input_shape} does not match network input {net.input_shape}")
    return evaluation.evaluate(net, data, timing=timing, split=split)


__all__ = ["start", "resume", "load_run", "eval_checkpoint", "RunStore", "RunError"]
