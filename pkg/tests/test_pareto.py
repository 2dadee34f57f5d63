from itertools import combinations

import numpy as np
import pytest
from helpers import brute_nondominated, mc_hypervolume
from hypothesis import given
from hypothesis import strategies as st

from petra.pareto import (
    Archive, MonteCarloHV, contributions, dominates, hypervolume, nondominated_mask, nondominated_sort,
    reference_point, weakly_dominates,
)


def _incl_excl(points, ref):
    """Exact union volume by inclusion-exclusion over every subset (small fronts only)."""
    pts = [np.asarray(p, dtype=float) for p in points]
    ref = np.asarray(ref, dtype=float)
    total = 0.0
    for k in range(1, len(pts) + 1):
        for sub in combinations(pts, k):
            corner = np.min(sub, axis=0)
            total += (-1) ** (k + 1) * float(np.prod(np.maximum(corner - ref, 0.0)))
    return total


def _random_front(r, n, d):
    pts = r.random((n, d))
    return pts[nondominated_mask(pts)]


vec = st.lists(st.integers(-3, 3), min_size=3, max_size=3)


# ------------------------------------------------------------------ dominance
def test_dominance_examples():
    # better quality but larger size: incomparable
    assert not dominates((0.9, -12), (0.8, -10)) and not dominates((0.8, -10), (0.9, -12))
    assert dominates((0.9, -10), (0.8, -12))
    assert dominates((0.9, -10), (0.9, -12))
    assert not dominates((0.9, -10), (0.9, -10))


def test_dominance_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        dominates((1, 2), (1, 2, 3))


@given(vec, vec, vec)
def test_dominance_strict_partial_order(a, b, c):
    assert not dominates(a, a)
    assert not (dominates(a, b) and dominates(b, a))
    if dominates(a, b) and dominates(b, c):
        assert dominates(a, c)
    assert weakly_dominates(a, a)


# ------------------------------------------------------------------ hypervolume
def test_hv_examples():
    assert hypervolume([(1, 1)], (0, 0)) == 1.0
    assert hypervolume([(2, 1), (1, 2)], (0, 0)) == 3.0
    assert hypervolume([(2, 1), (1, 2)], (0, 0)) == _incl_excl([(2, 1), (1, 2)], (0, 0))


def test_hv_point_not_dominating_reference():
    with pytest.raises(ValueError, match=r"\[0\.5, -1\.0\] does not dominate"):
        hypervolume([(1, 1), (0.5, -1.0)], (0, 0))


def test_hv_empty():
    assert hypervolume([], (0, 0)) == 0.0


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_hv_matches_inclusion_exclusion(d):
    r = np.random.default_rng(d)
    for _ in range(60):
        pts = r.random((int(r.integers(1, 8)), d)) + 0.01
        ref = np.zeros(d)
        assert abs(hypervolume(pts, ref) - _incl_excl(pts, ref)) <= 1e-12


def test_hv_dominated_and_duplicate_points_ignored():
    front = [(2, 1), (1, 2)]
    assert hypervolume(front + [(1, 1), (2, 1)], (0, 0)) == 3.0


def test_hv_matches_monte_carlo_small():
    r = np.random.default_rng(5)
    for d in (2, 3, 4):
        pts = _random_front(r, 12, d)
        ref = np.zeros(d)
        exact = hypervolume(pts, ref)
        assert abs(exact - mc_hypervolume(pts, ref, n=200_000, seed=d)) <= 0.01 * exact


@given(st.integers(0, 2 ** 31), st.integers(2, 4))
def test_hv_strictly_increases_with_nondominated_point(seed, d):
    r = np.random.default_rng(seed)
    front = _random_front(r, 6, d) + 0.1
    ref = np.zeros(d)
    # a new point beating every member on axis 0 is non-dominated and adds volume
    new = front[int(r.integers(len(front)))].copy()
    new[0] = front[:, 0].max() + 0.05
    grown = np.vstack([front, new])
    assert hypervolume(grown, ref) > hypervolume(front, ref)


def test_monte_carlo_estimator_high_dim():
    r = np.random.default_rng(9)
    pts = _random_front(r, 10, 6) + 0.01
    ref = np.zeros(6)
    mc = MonteCarloHV(ref, pts.max(axis=0), n=200_000, seed=1)
    est = mc.volume(pts)
    oracle = _incl_excl(pts, ref)
    assert abs(est - oracle) <= 0.03 * oracle
    # same cloud: adding a point never lowers the estimate
    assert mc.volume(np.vstack([pts, pts[0] * 0.5])) == est
    assert hypervolume(pts, ref, mc_samples=50_000, seed=2) == hypervolume(pts, ref, mc_samples=50_000, seed=2)


def test_contributions_example():
    assert contributions([(2, 1), (1, 2)], (0, 0)).tolist() == [1.0, 1.0]
    c = contributions([(2, 1), (1, 2), (1, 1)], (0, 0))
    assert c.tolist() == [1.0, 1.0, 0.0]


def test_reference_point():
    assert reference_point([(1, 5), (3, 2)]).tolist() == [1 - 1e-6, 2 - 1e-6]


# ------------------------------------------------------------------ sorting and archive
@given(st.lists(vec, min_size=1, max_size=25))
def test_nondominated_sort_partitions(points):
    fronts = nondominated_sort(points)
    flat = sorted(i for f in fronts for i in f)
    assert flat == list(range(len(points)))
    for k, f in enumerate(fronts):
        for i in f:
            assert not any(dominates(points[j], points[i]) for g in fronts[k:] for j in g)
            if k:
                assert any(dominates(points[j], points[i]) for j in fronts[k - 1])


@given(st.lists(vec, min_size=1, max_size=30))
def test_archive_equals_brute_force(points):
    a = Archive()
    for i, p in enumerate(points):
        a.insert(i, p)
        assert a.is_consistent()
    assert sorted(a.ids) == sorted(brute_nondominated(points))


@given(st.lists(vec, min_size=1, max_size=30))
def test_archive_hypervolume_non_decreasing(points):
    ref = np.min(points, axis=0) - 1.0
    a = Archive()
    last = 0.0
    for i, p in enumerate(points):
        a.insert(i, p)
        hv = a.hypervolume(ref)
        assert hv >= last
        last = hv


def test_archive_rejects_duplicate_and_dominated():
    a = Archive()
    assert a.insert("a", (1, 1))
    assert not a.insert("b", (1, 1))
    assert not a.insert("c", (0, 1))
    assert a.insert("d", (2, 2)) and a.ids == ["d"]


def test_archive_json_round_trip():
    a = Archive()
    for i, p in enumerate([(1, 3), (2, 2), (3, 1)]):
        a.insert(f"x{i}", p)
    b = Archive.from_json(a.to_json())
    assert b.ids == a.ids and np.array_equal(b.array(), a.array())
