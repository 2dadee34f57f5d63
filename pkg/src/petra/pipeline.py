"""Pipelines: a linear chain of stage nodes plus model-level hyperparameters.

String form follows the table labels, e.g. ``"Pr - Tr - Pr - PDQ"``; non-default
hyperparameters go in a parenthesized suffix: ``"Pr(ratio=0.5,structured=true) - Tr"``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

from petra import stages as reg

DEFAULT_MAX_DEPTH = 6


class PipelineParseError(ValueError):
    pass


@dataclass(frozen=True)
class StageNode:
    kind: str
    params: tuple = ()  # sorted (name, value) pairs, explicit values only
    label: str | None = field(default=None, compare=False)  # table alias such as "QD"

    def __post_init__(self):
        if self.kind not in reg.STAGE_KINDS:
            raise ValueError(f"unknown stage {self.kind}")

    @classmethod
    def make(cls, kind, label=None, **hp):
        kind = reg.ALIASES.get(kind, kind)
        return cls(kind, tuple(sorted(hp.items())), label)

    @property
    def hp(self) -> dict:
        """Full hyperparameters: schema defaults overlaid with explicit values."""
        out = reg.defaults(self.kind)
        out.update(dict(self.params))
        return out

    def with_hp(self, **hp) -> "StageNode":
        merged = dict(self.params)
        merged.update(hp)
        return replace(self, params=tuple(sorted(merged.items())))

    def explicit(self) -> dict:
        """Hyperparameters that differ from the schema defaults."""
        d = reg.defaults(self.kind)
        return {k: v for k, v in self.params if d.get(k, object()) != v}

    def __str__(self):
        name = self.label or self.kind
        ex = self.explicit()
        if not ex:
            return name
        body = ",".join(f"{k}={_fmt(v)}" for k, v in sorted(ex.items()))
        return f"{name}({body})"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class Pipeline:
    stages: tuple
    model: tuple = ()  # sorted (name, value) pairs for optimizer, learning_rate, batch_size, loss

    @classmethod
    def make(cls, stages, **model):
        return cls(tuple(stages), tuple(sorted(model.items())))

    def model_hp(self, task_kind: str) -> dict:
        out = reg.model_defaults(task_kind)
        out.update(dict(self.model))
        return out

    def with_model(self, **hp) -> "Pipeline":
        merged = dict(self.model)
        merged.update(hp)
        return replace(self, model=tuple(sorted(merged.items())))

    @property
    def kinds(self) -> tuple:
        return tuple(s.kind for s in self.stages)

    def __len__(self):
        return len(self.stages)

    def __str__(self):
        return to_string(self)

    def to_json(self) -> dict:
        return {
            "stages": [
                {"kind": s.kind, "hyperparams": dict(s.params), **({"label": s.label} if s.label else {})}
                for s in self.stages
            ],
            "model_hparams": dict(self.model),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Pipeline":
        unknown = set(obj) - {"stages", "model_hparams"}
        if unknown:
            raise PipelineParseError(f"unknown pipeline keys {sorted(unknown)}")
        nodes = [StageNode.make(s["kind"], s.get("label"), **s.get("hyperparams", {})) for s in obj["stages"]]
        return cls.make(nodes, **obj.get("model_hparams", {}))

    def key(self, upto: int | None = None) -> str:
        """Stable hash of the stage prefix (full hyperparameters) and model settings."""
        stages = self.stages if upto is None else self.stages[:upto]
        blob = json.dumps({"stages": [[s.kind, sorted(s.hp.items())] for s in stages],
                           "model": sorted(self.model)}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:20]


def to_string(p: Pipeline) -> str:
    return " - ".join(str(s) for s in p.stages)


def _split_top(s: str, sep: str):
    parts, depth, cur = [], 0, []
    for ch in s:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def parse(s: str) -> Pipeline:
    """Parse the table form; bare stage names get default hyperparameters."""
    if not s or not s.strip():
        raise PipelineParseError("empty pipeline string")
    nodes = []
    for token in _split_top(s, "-"):
        token = token.strip()
        if not token:
            raise PipelineParseError(f"empty stage in {s!r}")
        name, _, rest = token.partition("(")
        name = name.strip()
        canon = reg.ALIASES.get(name, name)
        if canon not in reg.STAGE_KINDS:
            raise PipelineParseError(f"unknown stage {name}")
        hp = {}
        if rest:
            if not rest.endswith(")"):
                raise PipelineParseError(f"unbalanced parenthesis in {token!r}")
            sch = reg.schema(canon)
            for item in filter(None, (x.strip() for x in rest[:-1].split(","))):
                k, eq, v = item.partition("=")
                k = k.strip()
                if not eq or k not in sch:
                    raise PipelineParseError(f"bad hyperparameter {item!r} for {name}")
                try:
                    hp[k] = sch[k].coerce(v.strip())
                except ValueError as exc:
                    raise PipelineParseError(str(exc)) from exc
        nodes.append(StageNode.make(canon, name if name != canon else None, **hp))
    return Pipeline.make(nodes)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


def validate(p: Pipeline, max_depth: int = DEFAULT_MAX_DEPTH, task_kind: str | None = None,
             features=None) -> list:
    """Return the list of violations (empty when the pipeline is valid); never raises."""
    out = []
    if not 1 <= len(p.stages) <= max_depth:
        out.append(Violation("depth", f"{len(p.stages)} stages, allowed 1..{max_depth}"))
    for i, node in enumerate(p.stages):
        sch = reg.schema(node.kind)
        for k, v in node.params:
            if k not in sch:
                out.append(Violation("unknown hyperparameter", f"stage {i} {node.kind}: {k}"))
                continue
            err = sch[k].check(v, features)
            if err:
                code = "ratio range" if k == "ratio" else "hyperparameter range"
                out.append(Violation(code, f"stage {i} {node.kind}: {err}"))
    if task_kind is not None:
        msch = {q.name: q for q in reg.model_schema(task_kind)}
        for k, v in p.model:
            if k not in msch:
                out.append(Violation("unknown model hyperparameter", k))
                continue
            err = msch[k].check(v)
            if err:
                out.append(Violation("model hyperparameter range", err))
    return out


def flags(p: Pipeline) -> list:
    """Informational notes on allowed-but-notable stage orders."""
    out = []
    seen_quant = False
    kinds = p.kinds
    for i, k in enumerate(kinds):
        if k in reg.TRAINING_KINDS and seen_quant:
            out.append(f"re-float at stage {i}")
        if k in reg.QUANT_KINDS:
            seen_quant = True
        if k == "Reg" and "LR" not in kinds:
            out.append(f"stage {i}: Reg without LR applies auxiliary regularizers only")
    return out
