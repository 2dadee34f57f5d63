"""Mutation operators over pipelines and their adaptive application probabilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from petra import stages as reg
from petra.pipeline import Pipeline, StageNode

LOCAL = ("local_hparam", "local_swap_kind")
GLOBAL = ("global_optimizer", "global_loss", "global_insert", "global_delete", "global_reorder")
DEFAULT_OPERATORS = LOCAL + GLOBAL
ALL_OPERATORS = DEFAULT_OPERATORS + ("noop",)
SMOOTH_ALPHA = 1.0
SMOOTH_BETA = 2.0
REG_LOSS_KEYS = ("lambda_o", "lambda_h", "l1", "lai", "norm")


@dataclass
class OperatorStats:
    name: str
    applications: int = 0
    successes: int = 0
    probability: float = 0.0


def fresh_node(kind: str, rng, features=None, sample_hp: bool = False) -> StageNode:
    """A stage of ``kind``; hyperparameters are defaults unless ``sample_hp``."""
    hp = {}
    for prm in reg.STAGE_SCHEMAS[kind]:
        if sample_hp:
            hp[prm.name] = prm.sample(rng, features)
        elif prm.kind == "cat" and prm.default not in prm.allowed(features):
            hp[prm.name] = prm.allowed(features)[0]
    return StageNode.make(kind, **hp)


def _tunable(node: StageNode):
    return [p for p in reg.STAGE_SCHEMAS[node.kind]]


def applicable(name: str, p: Pipeline, max_depth: int) -> bool:
    n = len(p.stages)
    if name == "local_hparam":
        return any(_tunable(s) for s in p.stages)
    if name == "global_insert":
        return n < max_depth
    if name == "global_delete":
        return n > 1
    if name == "global_reorder":
        return len(set(p.stages)) > 1
    return True


def apply_operator(name: str, p: Pipeline, rng, task_kind: str, max_depth: int, features=None) -> Pipeline:
    """One application of operator ``name``; the result may still need validation."""
    stages = list(p.stages)
    n = len(stages)
    if name == "noop":
        return p
    if name == "local_hparam":
        idx = [i for i, s in enumerate(stages) if _tunable(s)]
        i = idx[int(rng.integers(len(idx)))]
        node = stages[i]
        prm = _tunable(node)[int(rng.integers(len(_tunable(node))))]
        new = prm.mutate(node.hp[prm.name], rng, features)
        stages[i] = node.with_hp(**{prm.name: new})
        return Pipeline(tuple(stages), p.model)
    if name == "local_swap_kind":
        i = int(rng.integers(n))
        kinds = [k for k in reg.STAGE_KINDS if k != stages[i].kind]
        stages[i] = fresh_node(kinds[int(rng.integers(len(kinds)))], rng, features)
        return Pipeline(tuple(stages), p.model)
    if name == "global_optimizer":
        sch = {q.name: q for q in reg.model_schema(task_kind)}
        key = ("optimizer", "learning_rate", "batch_size")[int(rng.integers(3))]
        cur = p.model_hp(task_kind)[key]
        return p.with_model(**{key: sch[key].mutate(cur, rng)})
    if name == "global_loss":
        regs = [i for i, s in enumerate(stages) if s.kind == "Reg"]
        # the task loss, or one regularizer weight / switch of a Reg stage
        if regs and rng.random() < 0.5:
            i = regs[int(rng.integers(len(regs)))]
            sch = reg.schema("Reg")
            key = REG_LOSS_KEYS[int(rng.integers(len(REG_LOSS_KEYS)))]
            stages[i] = stages[i].with_hp(**{key: sch[key].mutate(stages[i].hp[key], rng)})
            return Pipeline(tuple(stages), p.model)
        sch = {q.name: q for q in reg.model_schema(task_kind)}
        return p.with_model(loss=sch["loss"].mutate(p.model_hp(task_kind)["loss"], rng))
    if name == "global_insert":
        pos = int(rng.integers(n + 1))
        kind = reg.STAGE_KINDS[int(rng.integers(len(reg.STAGE_KINDS)))]
        stages.insert(pos, fresh_node(kind, rng, features))
        return Pipeline(tuple(stages), p.model)
    if name == "global_delete":
        del stages[int(rng.integers(n))]
        return Pipeline(tuple(stages), p.model)
    if name == "global_reorder":
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if stages[i] != stages[j]]
        i, j = pairs[int(rng.integers(len(pairs)))]
        stages[i], stages[j] = stages[j], stages[i]
        return Pipeline(tuple(stages), p.model)
    raise ValueError(f"unknown operator {name!r}")


def sample_operator(ops: list, names, rng) -> str:
    """Draw one operator among ``names`` by current probabilities (renormalized over them)."""
    pool = [o for o in ops if o.name in names]
    w = np.array([o.probability for o in pool], dtype=np.float64)
    w = w / w.sum()
    return pool[int(rng.choice(len(pool), p=w))].name


def init_operators(names=DEFAULT_OPERATORS, weights=None) -> list:
    if not names:
        raise ValueError("no mutation operators enabled")
    unknown = set(names) - set(ALL_OPERATORS)
    if unknown:
        raise ValueError(f"unknown operators {sorted(unknown)}")
    w = np.ones(len(names)) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    return [OperatorStats(n, probability=float(x)) for n, x in zip(names, w)]


def adapt_probabilities(ops: list, p_min: float) -> list:
    """Probability proportional to smoothed success rate, mixed with a uniform floor.

    ``p = p_min + (1 - K * p_min) * rate / sum(rate)`` keeps every operator at
    or above ``p_min`` and the total at exactly one.
    """
    k = len(ops)
    if p_min * k > 1:
        raise ValueError(f"p_min={p_min} too large for {k} operators")
    rates = np.array([(o.successes + SMOOTH_ALPHA) / (o.applications + SMOOTH_BETA) for o in ops])
    share = rates / rates.sum()
    p = p_min + (1.0 - k * p_min) * share
    p = p / p.sum()
    for o, v in zip(ops, p):
        o.probability = float(v)
    return ops
