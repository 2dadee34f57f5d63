"""Run configuration: strict dataclass schema loaded from YAML or JSON.

Precedence: command-line flags (``--seed``, ``--generations``) override the
file, which overrides the defaults below. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from petra.data import FORMATS, SYNTHETIC
from petra.evaluation import AXES, DEFAULT_AXES, PROFILES
from petra.evolution import EvolutionConfig
from petra.nn.models import ARCHITECTURES
from petra.nn.network import TASK_KINDS


class ConfigError(ValueError):
    pass


@dataclass
class TaskConfig:
    dataset: str = "synthetic:two_gaussians"  # file path, or synthetic:<name>
    format: str | None = None  # tabular | timeseries | image (files only)
    kind: str = "binary"
    n_samples: int | None = None  # synthetic only
    generator: dict = field(default_factory=dict)  # extra synthetic generator arguments
    split: tuple = (0.7, 0.15, 0.15)

    @property
    def synthetic_name(self) -> str | None:
        return self.dataset.split(":", 1)[1] if self.dataset.startswith("synthetic:") else None


@dataclass
class ModelConfig:
    arch: str = "mlp"
    hidden: tuple = (64,)
    width: int = 8
    batchnorm: bool = False
    n_classes: int = 10  # multiclass tasks only
    base_epochs: int = 20


@dataclass
class EvalConfig:
    axes: tuple = DEFAULT_AXES
    devices: tuple = ("cpu", "gpu")
    timing: str = "measured"
    latency_repeats: int = 30
    latency_warmup: int = 5
    throughput_batch: int = 64
    throughput_batches: int = 10


@dataclass
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/petra"

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def digest(self) -> str:
        """Hash of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


_SECTIONS = {"task": TaskConfig, "model": ModelConfig, "evolution": EvolutionConfig, "evaluation": EvalConfig}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, raw, where):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kw = {}
    for k, v in raw.items():
        default = names[k].default
        if isinstance(v, list) and (isinstance(default, tuple) or k in ("operator_weights", "operators")):
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(raw) - set(_SECTIONS) - {"output_dir"})
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    kw = {name: _build(cls, raw.get(name), name) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**kw, output_dir=str(raw.get("output_dir", RunConfig.output_dir)))
    check(cfg)
    return cfg


def check(cfg: RunConfig):
    t, m, e = cfg.task, cfg.model, cfg.evaluation
    if t.kind not in TASK_KINDS:
        raise ConfigError(f"task.kind must be one of {TASK_KINDS}")
    name = t.synthetic_name
    if name is not None:
        if name not in SYNTHETIC:
            raise ConfigError(f"unknown synthetic dataset {name!r}, expected one of {sorted(SYNTHETIC)}")
        if SYNTHETIC[name][1] != t.kind:
            raise ConfigError(f"synthetic:{name} is a {SYNTHETIC[name][1]} task, config says {t.kind}")
    elif t.format not in FORMATS:
        raise ConfigError(f"task.format must be one of {FORMATS} for file datasets")
    if len(t.split) != 3 or abs(sum(t.split) - 1) > 1e-9 or min(t.split) <= 0:
        raise ConfigError("task.split must be three positive fractions summing to 1")
    if m.arch not in ARCHITECTURES:
        raise ConfigError(f"model.arch must be one of {sorted(ARCHITECTURES)}")
    if m.base_epochs < 0:
        raise ConfigError("model.base_epochs must be >= 0")
    if not e.axes:
        raise ConfigError("evaluation.axes must not be empty")
    bad = [a for a in e.axes if a not in AXES]
    if bad:
        raise ConfigError(f"unknown objective axes {bad}")
    bad = [d for d in e.devices if d not in PROFILES]
    if bad:
        raise ConfigError(f"unknown device profiles {bad}")
    if e.timing not in ("measured", "modeled"):
        raise ConfigError("evaluation.timing must be measured or modeled")


def load(path) -> RunConfig:
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw or {})


def with_overrides(cfg: RunConfig, seed: int | None = None, generations: int | None = None,
                   output_dir: str | None = None) -> RunConfig:
    raw = cfg.to_dict()
    if seed is not None:
        raw["evolution"]["seed"] = seed
    if generations is not None:
        raw["evolution"]["max_generations"] = generations
    if output_dir is not None:
        raw["output_dir"] = output_dir
    return from_dict(raw)
