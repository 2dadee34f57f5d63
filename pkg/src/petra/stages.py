"""Hyperparameter schemas for every stage kind and for model-level settings.

Validation, sampling and mutation all read from this registry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from petra.nn.losses import LOSSES_BY_TASK
from petra.nn.optim import OPTIMIZERS

STAGE_KINDS = ("Reg", "Tr", "LR", "Pr", "QAT", "PDQ", "PTQ", "FP16")
TRAINING_KINDS = ("Reg", "Tr", "QAT")
QUANT_KINDS = ("PTQ", "PDQ", "FP16")
ALIASES = {"QD": "PDQ", "QS": "PTQ"}
STEP_FACTOR = 3.0  # log-uniform multiplicative step in [1/3, 3]


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # float | int | cat | bool
    default: object
    low: float | None = None
    high: float | None = None
    choices: tuple = ()

    def allowed(self, features=None):
        if self.kind != "cat":
            return self.choices
        features = features or {}
        return tuple(c for c in self.choices if not (c == "bn_scale" and not features.get("batchnorm", True)))

    def check(self, value, features=None):
        """Return an error message or None."""
        if self.kind == "bool":
            return None if isinstance(value, (bool, np.bool_)) else f"{self.name} must be a bool"
        if self.kind == "cat":
            if value not in self.allowed(features):
                return f"{self.name}={value!r} not in {self.allowed(features)}"
            return None
        if self.kind == "int" and (isinstance(value, bool) or int(value) != value):
            return f"{self.name} must be an integer"
        if not isinstance(value, (int, float, np.integer, np.floating)) or not math.isfinite(value):
            return f"{self.name} must be a finite number"
        if not self.low <= value <= self.high:
            return f"{self.name}={value} outside [{self.low}, {self.high}]"
        return None

    def sample(self, rng, features=None):
        if self.kind == "bool":
            return bool(rng.random() < 0.5)
        if self.kind == "cat":
            ch = self.allowed(features)
            return ch[int(rng.integers(len(ch)))]
        if self.kind == "int":
            return int(rng.integers(self.low, self.high + 1))
        return _round(math.exp(rng.uniform(math.log(self.low), math.log(self.high))), self.low, self.high)

    def mutate(self, value, rng, features=None):
        """A different in-range value: log-uniform step (float), adjacent step (int), uniform (cat/bool)."""
        if self.kind == "bool":
            return not value
        if self.kind == "cat":
            others = [c for c in self.allowed(features) if c != value]
            return others[int(rng.integers(len(others)))] if others else value
        if self.kind == "int":
            if self.low == self.high:
                return value
            step = 1 if rng.random() < 0.5 else -1
            new = value + step
            if not self.low <= new <= self.high:
                new = value - step
            return int(new)
        for _ in range(16):
            f = math.exp(rng.uniform(-math.log(STEP_FACTOR), math.log(STEP_FACTOR)))
            new = _round(value * f, self.low, self.high)
            if new != value:
                return new
        return float(self.low if value != self.low else self.high)

    def coerce(self, raw: str):
        if self.kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"{self.name}: cannot read {raw!r} as bool")
        if self.kind == "int":
            return int(raw)
        if self.kind == "float":
            return float(raw)
        return raw


def _round(x, low, high):
    """Four significant digits keep pipeline strings short and exactly re-parsable."""
    return float(min(max(float(f"{x:.4g}"), low), high))


_EPOCHS = Param("epochs", "int", 5, 1, 30)
_LR_SCALE = Param("lr_scale", "float", 1.0, 0.1, 10.0)

STAGE_SCHEMAS: dict[str, tuple[Param, ...]] = {
    "Tr": (_EPOCHS, _LR_SCALE),
    "Reg": (
        _EPOCHS, _LR_SCALE,
        Param("lambda_o", "float", 1e-2, 1e-4, 1.0),
        Param("lambda_h", "float", 1e-3, 1e-4, 1.0),
        Param("l1", "bool", False),
        Param("l1_weight", "float", 1e-4, 1e-6, 1e-2),
        Param("lai", "bool", False),
        Param("lai_weight", "float", 1e-2, 1e-4, 1.0),
        Param("lai_tau", "float", 1.0, 1e-3, 10.0),
        Param("norm", "bool", False),
        Param("norm_weight", "float", 1e-3, 1e-4, 1e-1),
    ),
    "LR": (
        Param("criterion", "cat", "energy", choices=("energy", "explained_variance", "sv_proportion")),
        Param("threshold", "float", 0.9, 0.5, 1.0),
    ),
    "Pr": (
        Param("ratio", "float", 0.3, 0.05, 0.9),
        Param("criterion", "cat", "magnitude", choices=("magnitude", "taylor", "hessian", "bn_scale", "lamp")),
        Param("scope", "cat", "layer", choices=("layer", "global")),
        Param("structured", "bool", False),
        Param("compact", "bool", True),
    ),
    "QAT": (Param("epochs", "int", 3, 1, 30), _LR_SCALE),
    "PTQ": (Param("calib_batches", "int", 8, 1, 32),),
    "PDQ": (),
    "FP16": (),
}

BATCH_SIZES = (16, 32, 64, 128)


def model_schema(task_kind: str) -> tuple[Param, ...]:
    losses = LOSSES_BY_TASK[task_kind]
    return (
        Param("optimizer", "cat", "adam", choices=OPTIMIZERS),
        Param("learning_rate", "float", 1e-3, 1e-4, 1e-1),
        Param("batch_size", "cat", 64, choices=BATCH_SIZES),
        Param("loss", "cat", losses[0], choices=losses),
    )


def schema(kind: str) -> dict[str, Param]:
    return {p.name: p for p in STAGE_SCHEMAS[kind]}


def defaults(kind: str) -> dict:
    return {p.name: p.default for p in STAGE_SCHEMAS[kind]}


def model_defaults(task_kind: str) -> dict:
    return {p.name: p.default for p in model_schema(task_kind)}
