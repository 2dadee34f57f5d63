"""Dominance, hypervolume and the elitist Pareto archive (all objectives maximized)."""

from __future__ import annotations

import numpy as np

from petra.rng import make_rng

EXACT_MAX_DIM = 4
DEFAULT_MC_SAMPLES = 100_000
REF_EPS = 1e-6


def dominates(a, b) -> bool:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"objective vectors differ in length: {a.size} vs {b.size}")
    return bool(np.all(a >= b) and np.any(a > b))


def weakly_dominates(a, b) -> bool:
    return bool(np.all(np.asarray(a, dtype=np.float64) >= np.asarray(b, dtype=np.float64)))


def _check_ref(points: np.ndarray, ref: np.ndarray):
    for p in points:
        if not np.all(p > ref):
            raise ValueError(f"point {p.tolist()} does not dominate the reference point {ref.tolist()}")


def _hv_sweep(pts: np.ndarray, ref: np.ndarray) -> float:
    """Exact hypervolume by recursive slicing along the last axis."""
    d = pts.shape[1]
    if len(pts) == 0:
        return 0.0
    if d == 1:
        return float(pts[:, 0].max() - ref[0])
    order = np.argsort(-pts[:, -1], kind="stable")
    pts = pts[order]
    total = 0.0
    for i in range(len(pts)):
        top = pts[i, -1]
        bottom = pts[i + 1, -1] if i + 1 < len(pts) else ref[-1]
        if top > bottom:
            total += _hv_sweep(pts[:i + 1, :-1], ref[:-1]) * (top - bottom)
    return total


def nondominated_mask(points) -> np.ndarray:
    """True for points not dominated by any other (duplicates all kept)."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        ge = np.all(pts >= pts[i], axis=1)
        gt = np.any(pts > pts[i], axis=1)
        if np.any(ge & gt):
            keep[i] = False
    return keep


def hypervolume(points, ref, mc_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0, upper=None) -> float:
    """Lebesgue measure of the union of boxes ``[ref, p]``.

    Exact for dimension <= 4; Monte-Carlo with ``mc_samples`` fixed-seed samples
    in the box ``[ref, upper]`` above that (``upper`` defaults to the
    componentwise max of ``points``).
    """
    pts = np.asarray(points, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pts.size == 0:
        return 0.0
    pts = pts.reshape(-1, ref.size)
    _check_ref(pts, ref)
    if ref.size <= EXACT_MAX_DIM:
        pts = pts[nondominated_mask(pts)]
        return _hv_sweep(np.unique(pts, axis=0), ref)
    return MonteCarloHV(ref, upper if upper is not None else pts.max(axis=0), mc_samples, seed).volume(pts)


class MonteCarloHV:
    """Fixed sample cloud in a box; volumes over the same cloud are comparable and monotone."""

    def __init__(self, ref, upper, n: int = DEFAULT_MC_SAMPLES, seed: int = 0):
        self.ref = np.asarray(ref, dtype=np.float64)
        self.upper = np.maximum(np.asarray(upper, dtype=np.float64), self.ref)
        rng = make_rng(seed, "hypervolume-mc")
        self.samples = self.ref + rng.random((n, self.ref.size)) * (self.upper - self.ref)
        self.box = float(np.prod(self.upper - self.ref))

    def dominated(self, pts) -> np.ndarray:
        """Boolean matrix ``samples x points``: sample inside the point's box."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, self.ref.size)
        out = np.empty((len(self.samples), len(pts)), dtype=bool)
        for j, p in enumerate(pts):
            out[:, j] = np.all(self.samples <= p, axis=1)
        return out

    def volume(self, pts) -> float:
        if len(pts) == 0:
            return 0.0
        return self.box * float(np.mean(self.dominated(pts).any(axis=1)))

    def contributions(self, pts) -> np.ndarray:
        dom = self.dominated(pts)
        only = dom & (dom.sum(axis=1, keepdims=True) == 1)
        return self.box * only.mean(axis=0)


def contributions(points, ref, mc_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> np.ndarray:
    """Exclusive hypervolume contribution of every point."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, np.size(ref))
    if len(pts) == 0:
        return np.zeros(0)
    ref = np.asarray(ref, dtype=np.float64)
    _check_ref(pts, ref)
    if ref.size > EXACT_MAX_DIM:
        return MonteCarloHV(ref, pts.max(axis=0), mc_samples, seed).contributions(pts)
    total = hypervolume(pts, ref)
    out = np.empty(len(pts))
    for i in range(len(pts)):
        rest = np.delete(pts, i, axis=0)
        out[i] = total - (hypervolume(rest, ref) if len(rest) else 0.0)
    return np.maximum(out, 0.0)


def reference_point(vectors, eps: float = REF_EPS) -> np.ndarray:
    return np.asarray(vectors, dtype=np.float64).min(axis=0) - eps


def nondominated_sort(points) -> list:
    """Fronts as lists of indices, best first."""
    pts = np.asarray(points, dtype=np.float64)
    remaining = list(range(len(pts)))
    fronts = []
    while remaining:
        mask = nondominated_mask(pts[remaining])
        front = [remaining[i] for i in np.flatnonzero(mask)]
        fronts.append(front)
        remaining = [r for r, m in zip(remaining, mask) if not m]
    return fronts


class Archive:
    """Elitist non-dominated set of ``(id, objective vector)`` pairs.

    A candidate weakly dominated by a member (including an exact duplicate) is
    rejected; otherwise it enters and evicts every member it dominates.
    """

    def __init__(self):
        self.ids: list = []
        self.points: list = []

    def __len__(self):
        return len(self.ids)

    def __contains__(self, ident):
        return ident in self.ids

    def insert(self, ident, point) -> bool:
        p = np.asarray(point, dtype=np.float64)
        for q in self.points:
            if weakly_dominates(q, p):
                return False
        keep = [i for i, q in enumerate(self.points) if not dominates(p, q)]
        self.ids = [self.ids[i] for i in keep] + [ident]
        self.points = [self.points[i] for i in keep] + [p]
        return True

    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)

    def hypervolume(self, ref, **kw) -> float:
        return hypervolume(self.array(), ref, **kw) if self.points else 0.0

    def is_consistent(self) -> bool:
        return all(not dominates(a, b) for i, a in enumerate(self.points)
                   for j, b in enumerate(self.points) if i != j)

    def to_json(self) -> dict:
        return {"ids": list(self.ids), "points": [p.tolist() for p in self.points]}

    @classmethod
    def from_json(cls, d: dict) -> "Archive":
        a = cls()
        a.ids = list(d["ids"])
        a.points = [np.asarray(p, dtype=np.float64) for p in d["points"]]
        return a
