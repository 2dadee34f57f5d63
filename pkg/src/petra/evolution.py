"""Mutation-only elitist multi-objective search over compression pipelines.

One generation: select parents (archive by hypervolume contribution, plus a
random share of the population), mutate each with one adaptively chosen
operator, execute and evaluate the offspring, then at the barrier impute
unavailable axes, update the archive, adapt operator probabilities and
truncate archive plus offspring back to the population size.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from petra import evaluation, metrics, pareto
from petra import operators as ops_mod
from petra import stages as reg
from petra.execute import ExecResult, StageCache, StageRecord, execute, prefix_keys
from petra.nn.network import Network
from petra.pipeline import Pipeline, validate
from petra.rng import make_rng

INIT_MODES = ("pretrained", "untrained")
WORKERS_ENV = "PETRA_WORKERS"


class SearchError(RuntimeError):
    pass


@dataclass
class EvolutionConfig:
    population_size: int = 8
    max_generations: int | None = 10
    time_budget_seconds: float | None = None
    quality_threshold: float | None = None
    seed: int = 0
    init_mode: str = "pretrained"
    init_max_depth: int = 3
    max_depth: int = 6
    offspring: int | None = None  # defaults to population_size
    p_min: float = 0.02
    selection_random_fraction: float = 0.25
    early_stop_delta: float = 0.05
    early_stop_patience: int = 2
    early_stop_warmup: int = 3
    operators: tuple = ops_mod.DEFAULT_OPERATORS
    operator_weights: tuple | None = None
    mutation_retries: int = 16
    init_retries: int = 200
    mc_samples: int = 100_000

    def __post_init__(self):
        self.operators = tuple(self.operators)
        if self.operator_weights is not None:
            self.operator_weights = tuple(self.operator_weights)
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        if self.max_generations is None and self.time_budget_seconds is None and self.quality_threshold is None:
            raise ValueError("enable at least one stopping criterion")
        if self.max_generations is not None and self.max_generations < 0:
            raise ValueError("max_generations must be >= 0")
        if not 0 <= self.selection_random_fraction <= 1:
            raise ValueError("selection_random_fraction must be in [0, 1]")
        if not 0 <= self.p_min * len(self.operators) <= 1:
            raise ValueError("p_min times the operator count must be within [0, 1]")
        if not 1 <= self.init_max_depth <= self.max_depth:
            raise ValueError("init_max_depth must be within 1..max_depth")
        ops_mod.init_operators(self.operators, self.operator_weights)

    @property
    def n_offspring(self) -> int:
        return self.offspring or self.population_size


@dataclass
class Individual:
    id: str
    pipeline: Pipeline
    generation: int
    parent: str | None = None
    operator: str = "init"
    root: str = ""
    status: str = "pending"  # ok | partial | failed
    metrics: evaluation.MetricVector | None = None
    raw_objectives: list | None = None  # None entries mark unavailable axes
    objectives: list | None = None  # imputed at the generation barrier, then frozen
    records: list = field(default_factory=list)
    error: str | None = None
    entered_archive: bool = False

    @property
    def evaluated(self) -> bool:
        return self.metrics is not None

    def to_json(self) -> dict:
        return {
            "id": self.id, "pipeline": self.pipeline.to_json(), "pipeline_string": str(self.pipeline),
            "generation": self.generation,
            "lineage": {"parent": self.parent, "operator": self.operator, "root": self.root},
            "status": self.status,
            "metrics": None if self.metrics is None else self.metrics.to_json(),
            "raw_objectives": self.raw_objectives, "objectives": self.objectives,
            "records": [r.to_json() for r in self.records], "error": self.error,
            "entered_archive": self.entered_archive,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Individual":
        lin = d["lineage"]
        return cls(
            id=d["id"], pipeline=Pipeline.from_json(d["pipeline"]), generation=d["generation"],
            parent=lin["parent"], operator=lin["operator"], root=lin["root"], status=d["status"],
            metrics=None if d["metrics"] is None else evaluation.MetricVector.from_json(d["metrics"]),
            raw_objectives=d["raw_objectives"], objectives=d["objectives"],
            records=[StageRecord.from_json(r) for r in d["records"]], error=d["error"],
            entered_archive=d["entered_archive"],
        )


@dataclass
class EarlyStop:
    """Abort once ``patience`` consecutive epochs past ``warmup`` sit below ``best - delta``.

    Epochs are counted from 1 and only epochs strictly after ``warmup`` count,
    so a trace that is always too low aborts at epoch ``warmup + patience``.
    """

    best: float | None
    delta: float
    patience: int
    warmup: int = 3

    def __call__(self, trace) -> bool:
        return early_stop_check(trace, self.best, self.delta, self.patience, self.warmup)


def early_stop_check(trace, best, delta: float, patience: int, warmup: int = 3) -> bool:
    if best is None or patience < 1 or len(trace) < warmup + patience:
        return False
    tail = trace[-patience:]
    return all(v < best - delta for v in tail)


# ----------------------------------------------------------------- sampling
def features_of(net: Network) -> dict:
    return {"batchnorm": net.has_batchnorm()}


def is_valid(p: Pipeline, cfg: EvolutionConfig, task_kind: str, features) -> bool:
    if validate(p, cfg.max_depth, task_kind, features):
        return False
    if cfg.init_mode == "untrained" and p.stages[0].kind not in reg.TRAINING_KINDS:
        return False
    return True


def sample_pipeline(rng, cfg: EvolutionConfig, task_kind: str, features) -> Pipeline:
    depth = int(rng.integers(1, cfg.init_max_depth + 1))
    nodes = []
    for i in range(depth):
        pool = reg.TRAINING_KINDS if (i == 0 and cfg.init_mode == "untrained") else reg.STAGE_KINDS
        nodes.append(ops_mod.fresh_node(pool[int(rng.integers(len(pool)))], rng, features))
    return Pipeline.make(nodes)


def init_population(cfg: EvolutionConfig, task_kind: str, features, rng, root: str = "base") -> list:
    """``population_size`` distinct valid pipelines, reproducible for a given rng."""
    out, seen = [], set()
    for _ in range(cfg.init_retries):
        if len(out) == cfg.population_size:
            break
        p = sample_pipeline(rng, cfg, task_kind, features)
        s = str(p)
        if s in seen or not is_valid(p, cfg, task_kind, features):
            continue
        seen.add(s)
        out.append(Individual(id=f"g000-{len(out):02d}", pipeline=p, generation=0, root=root))
    if len(out) < cfg.population_size:
        raise SearchError(f"could only sample {len(out)} distinct valid pipelines")
    return out


def select_parents(archive_ids, contribs, population_ids, k: int, rho: float, rng) -> list:
    """``ceil((1-rho)k)`` archive draws weighted by hypervolume contribution, ``floor(rho k)`` uniform."""
    if not population_ids:
        raise SearchError("empty population")
    n_rand = int(math.floor(rho * k + 1e-12))
    n_arch = k - n_rand
    if not archive_ids:
        n_rand, n_arch = k, 0
    out = []
    if n_arch:
        w = np.asarray(contribs, dtype=np.float64)
        w = np.ones(len(archive_ids)) if not np.all(np.isfinite(w)) or w.sum() <= 0 else w
        idx = rng.choice(len(archive_ids), size=n_arch, p=w / w.sum())
        out += [archive_ids[i] for i in idx]
    if n_rand:
        idx = rng.integers(0, len(population_ids), size=n_rand)
        out += [population_ids[i] for i in idx]
    return out


def mutate(parent: Individual, ops: list, rng, cfg: EvolutionConfig, task_kind: str, features):
    """``(pipeline, operator)`` from one sampled operator, or None after bounded retries."""
    for _ in range(cfg.mutation_retries):
        names = [o.name for o in ops if ops_mod.applicable(o.name, parent.pipeline, cfg.max_depth)]
        if not names:
            return None
        op = ops_mod.sample_operator(ops, names, rng)
        child = ops_mod.apply_operator(op, parent.pipeline, rng, task_kind, cfg.max_depth, features)
        if is_valid(child, cfg, task_kind, features):
            return child, op
    return None


# ----------------------------------------------------------------- workers
def _execute_job(job):
    pipeline, base, data, seed, entries, hook = job
    cache = StageCache()
    cache.merge(entries)
    cache.new_keys = []
    res = execute(pipeline, base, data, seed, cache, hook)
    return res, cache.fresh_entries()


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# ----------------------------------------------------------------- search
@dataclass
class EvalSettings:
    task_kind: str
    axes: tuple = evaluation.DEFAULT_AXES
    devices: tuple = ("cpu", "gpu")
    timing: str = "measured"
    latency_repeats: int = 30
    latency_warmup: int = 5
    throughput_batch: int = 64
    throughput_batches: int = 10


class Search:
    """Holds the whole evolving state; ``to_state``/``from_state`` make it resumable at barriers."""

    def __init__(self, cfg: EvolutionConfig, base: Network, data, settings: EvalSettings, base_id: str = "base",
                 store=None, workers: int | None = None):
        self.cfg = cfg
        self.base = base
        self.data = data
        self.settings = settings
        self.base_id = base_id
        self.store = store
        self.workers = worker_count() if workers is None else workers
        self.features = features_of(base)
        self.cache = StageCache()
        self.generation = -1
        self.individuals: dict = {}
        self.population: list = []
        self.archive = pareto.Archive()
        self.ops = ops_mod.init_operators(cfg.operators, cfg.operator_weights)
        self.worst: list = [None] * len(settings.axes)
        self.history: list = []
        self.elapsed = 0.0
        self.stop_reason: str | None = None

    # ---------------------------------------------------------- state
    def to_state(self) -> dict:
        return {
            "generation": self.generation,
            "individuals": [ind.to_json() for ind in self.individuals.values()],
            "population": list(self.population),
            "archive": self.archive.to_json(),
            "operators": [asdict(o) for o in self.ops],
            "worst": self.worst,
            "history": self.history,
            "elapsed": self.elapsed,
            "stop_reason": self.stop_reason,
        }

    def load_state(self, st: dict):
        self.generation = st["generation"]
        self.individuals = {d["id"]: Individual.from_json(d) for d in st["individuals"]}
        self.population = list(st["population"])
        self.archive = pareto.Archive.from_json(st["archive"])
        self.ops = [ops_mod.OperatorStats(**o) for o in st["operators"]]
        self.worst = list(st["worst"])
        self.history = list(st["history"])
        self.elapsed = st["elapsed"]
        self.stop_reason = st["stop_reason"]

    # ---------------------------------------------------------- helpers
    def evaluated(self, statuses=("ok", "partial")) -> list:
        return [i for i in self.individuals.values() if i.status in statuses]

    def reference(self) -> np.ndarray | None:
        pts = [i.objectives for i in self.evaluated()]
        return pareto.reference_point(pts) if pts else None

    def _hv_kw(self, upper=None):
        return {"mc_samples": self.cfg.mc_samples, "seed": self.cfg.seed, "upper": upper}

    def archive_hypervolume(self, ids=None, ref=None, upper=None) -> float:
        ref = self.reference() if ref is None else ref
        ids = self.archive.ids if ids is None else ids
        if ref is None or not ids:
            return 0.0
        pts = [self.individuals[i].objectives for i in ids]
        if upper is None:
            upper = np.max([i.objectives for i in self.evaluated()], axis=0)
        return pareto.hypervolume(pts, ref, **self._hv_kw(upper))

    def best_quality(self):
        if not self.archive.ids:
            return None
        return max(metrics.oriented(self.settings.task_kind, self.individuals[i].metrics.quality)
                   for i in self.archive.ids)

    def early_stop(self) -> EarlyStop:
        c = self.cfg
        return EarlyStop(self.best_quality(), c.early_stop_delta, c.early_stop_patience, c.early_stop_warmup)

    # ---------------------------------------------------------- evaluation
    def _execute_all(self, inds, hook) -> list:
        seed = self.cfg.seed
        if self.workers <= 1 or len(inds) <= 1:
            return [execute(ind.pipeline, self.base, self.data, seed, self.cache, hook) for ind in inds]
        jobs = []
        for ind in inds:
            sub = self.cache.subset(prefix_keys(ind.pipeline, seed))
            jobs.append((ind.pipeline, self.base, self.data, seed, dict(sub._d), hook))
        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            out = list(pool.map(_execute_job, jobs))
        results = []
        for res, fresh in out:
            self.cache.merge(fresh)
            results.append(res)
        return results

    def _measure(self, ind: Individual, res: ExecResult):
        s = self.settings
        ind.records = res.records
        if res.status == "failed":
            ind.status = "failed"
            ind.error = f"stage {res.failed_stage} ({res.records[-1].kind}): {res.error}"
            return
        ind.status = "ok" if res.status == "ok" else "partial"
        ind.metrics = evaluation.evaluate(
            res.net, self.data, depth=len(ind.pipeline), train_seconds=sum(r.seconds for r in res.records),
            devices=s.devices, timing=s.timing, partial=ind.status == "partial",
            latency_repeats=s.latency_repeats, latency_warmup=s.latency_warmup,
            batch=s.throughput_batch, n_batches=s.throughput_batches, epochs_run=res.epochs_run)
        ind.raw_objectives = evaluation.raw_objectives(ind.metrics, s.axes, s.task_kind)
        if self.store is not None:
            self.store.write_model(ind, res.net)

    def evaluate_batch(self, inds: list):
        results = self._execute_all(inds, self.early_stop())
        for ind, res in zip(inds, results):
            self._measure(ind, res)

    # ---------------------------------------------------------- barrier
    def barrier(self, new: list):
        live = [i for i in new if i.status != "failed"]
        filled = evaluation.impute([i.raw_objectives for i in live], self.worst)
        for ind, obj in zip(live, filled):
            ind.objectives = [float(v) for v in obj]
            for j, v in enumerate(ind.raw_objectives):
                if v is not None and (self.worst[j] is None or v < self.worst[j]):
                    self.worst[j] = v
        for ind in new:
            if ind.status == "ok":
                ind.entered_archive = self.archive.insert(ind.id, ind.objectives)
        if self.generation > 0:
            by_name = {o.name: o for o in self.ops}
            for ind in new:
                o = by_name[ind.operator]
                o.applications += 1
                o.successes += int(ind.entered_archive)
            ops_mod.adapt_probabilities(self.ops, self.cfg.p_min)
        self.population = self._truncate(new)
        ref = self.reference()
        self.history.append({
            "generation": self.generation,
            "hypervolume": self.archive_hypervolume(ref=ref),
            "archive": list(self.archive.ids),
            "archive_size": len(self.archive),
            "population": list(self.population),
            "evaluated": len(new),
            "failed": sum(i.status == "failed" for i in new),
            "partial": sum(i.status == "partial" for i in new),
            "entered": sum(i.entered_archive for i in new),
            "operator_probabilities": {o.name: o.probability for o in self.ops},
        })

    def _truncate(self, new: list) -> list:
        """Archive members plus newest offspring, cut to N by front rank then contribution."""
        n = self.cfg.population_size
        cand = list(dict.fromkeys(list(self.archive.ids) + [i.id for i in new]))
        live = [c for c in cand if self.individuals[c].objectives is not None]
        dead = [c for c in cand if self.individuals[c].objectives is None]
        if not live:
            return dead[:n]
        pts = np.asarray([self.individuals[c].objectives for c in live])
        ref = self.reference()
        order = []
        for front in pareto.nondominated_sort(pts):
            fpts = pts[front]
            contrib = pareto.contributions(fpts, ref, self.cfg.mc_samples, self.cfg.seed)
            ranked = sorted(range(len(front)), key=lambda k: (-contrib[k], live[front[k]]))
            order += [live[front[k]] for k in ranked]
        return (order + dead)[:n]

    # ---------------------------------------------------------- loop
    def initialize(self):
        rng = make_rng(self.cfg.seed, "gen", 0)
        self.generation = 0
        inds = init_population(self.cfg, self.settings.task_kind, self.features, rng, root=self.base_id)
        for ind in inds:
            self.individuals[ind.id] = ind
        self.evaluate_batch(inds)
        self.barrier(inds)

    def step(self):
        g = self.generation + 1
        self.generation = g
        rng = make_rng(self.cfg.seed, "gen", g)
        ref = self.reference()
        arch = list(self.archive.ids)
        contribs = (pareto.contributions([self.individuals[i].objectives for i in arch], ref,
                                         self.cfg.mc_samples, self.cfg.seed) if arch else [])
        parents = select_parents(arch, contribs, self.population, self.cfg.n_offspring,
                                 self.cfg.selection_random_fraction, rng)
        kids = []
        for j, pid in enumerate(parents):
            parent = self.individuals[pid]
            got = mutate(parent, self.ops, rng, self.cfg, self.settings.task_kind, self.features)
            if got is None:
                continue
            child, op = got
            kids.append(Individual(id=f"g{g:03d}-{j:02d}", pipeline=child, generation=g, parent=pid,
                                   operator=op, root=parent.root))
        for ind in kids:
            self.individuals[ind.id] = ind
        self.evaluate_batch(kids)
        self.barrier(kids)

    def should_stop(self) -> str | None:
        c = self.cfg
        if c.max_generations is not None and self.generation >= c.max_generations:
            return "max_generations"
        if c.time_budget_seconds is not None and self.elapsed >= c.time_budget_seconds:
            return "time_budget"
        if c.quality_threshold is not None and self.archive.ids:
            thr = metrics.oriented(self.settings.task_kind, c.quality_threshold)
            if self.best_quality() >= thr:
                return "quality_threshold"
        return None

    def run(self, on_generation=None):
        """Run (or continue) until a stopping criterion fires.

        ``on_generation(search)`` is called after every barrier; returning True
        interrupts the run there, leaving a resumable state.
        """
        while True:
            if self.stop_reason is not None:
                break
            t0 = time.perf_counter()
            if self.generation < 0:
                self.initialize()
            else:
                self.step()
            self.elapsed += time.perf_counter() - t0
            self.stop_reason = self.should_stop()
            if self.store is not None:
                self.store.write_generation(self)
            if on_generation is not None and on_generation(self):
                return None
        return self.result()

    def result(self) -> dict:
        ref = self.reference()
        upper = np.max([i.objectives for i in self.evaluated()], axis=0) if self.evaluated() else None
        hv = [self.archive_hypervolume(ids=h["archive"], ref=ref, upper=upper) for h in self.history]
        return {
            "archive": [self.individuals[i] for i in self.archive.ids],
            "history": self.history,
            "hypervolume_final_reference": hv,
            "reference_point": None if ref is None else ref.tolist(),
            "stop_reason": self.stop_reason,
        }


def run(cfg: EvolutionConfig, base: Network, data, settings: EvalSettings, store=None, on_generation=None,
        workers: int | None = None, base_id: str = "base"):
    search = Search(cfg, base, data, settings, base_id=base_id, store=store, workers=workers)
    return search.run(on_generation), search


__all__ = ["EvolutionConfig", "Individual", "EarlyStop", "early_stop_check", "init_population",
           "select_parents", "mutate", "Search", "EvalSettings", "run"]
