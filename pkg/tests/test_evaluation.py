
import numpy as np
import pytest
from helpers import brute_auc, f1_oracle, rmse_oracle
from hypothesis import given
from hypothesis import strategies as st

from petra import evaluation as ev
from petra import pruning, quantization
from petra.data import synthetic
from petra.metrics import f1_macro, oriented, quality, rmse, roc_auc
from petra.nn.models import mlp
from petra.pareto import dominates


def _metric(**kw):
    base = dict(quality=0.8, quality_name="ROC-AUC", cpu_latency_ms=1.0, gpu_latency_ms=0.5,
                cpu_throughput_ips=1000.0, gpu_throughput_ips=5000.0, size_mb=1.0, depth=2, train_seconds=3.0)
    base.update(kw)
    return ev.MetricVector(**base)


# ------------------------------------------------------------------ quality metrics
def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75
    assert roc_auc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.5, 0.5], [1, 0]) == 0.5


def test_auc_degenerate_labels():
    with pytest.raises(ValueError, match="degenerate labels"):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_matches_pair_count_1000_cases():
    r = np.random.default_rng(0)
    for _ in range(1000):
        n = int(r.integers(2, 40))
        labels = r.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = np.round(r.random(n), int(r.integers(1, 4)))  # coarse rounding creates ties
        assert abs(roc_auc(scores, labels) - brute_auc(scores, labels)) <= 1e-10


def test_f1_matches_oracle_1000_cases():
    r = np.random.default_rng(1)
    for _ in range(1000):
        n = int(r.integers(1, 40))
        k = int(r.integers(2, 6))
        preds, labels = r.integers(0, k, n), r.integers(0, k, n)
        assert abs(f1_macro(preds, labels) - f1_oracle(list(preds), list(labels))) <= 1e-10


def test_rmse_matches_oracle_1000_cases():
    r = np.random.default_rng(2)
    for _ in range(1000):
        n = int(r.integers(1, 40))
        p, t = r.standard_normal(n) * 10, r.standard_normal(n) * 10
        assert abs(rmse(p, t) - rmse_oracle(list(p), list(t))) <= 1e-10


def test_rmse_zero_iff_exact():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([1.0, 2.0], [1.0, 2.5]) > 0


def test_f1_absent_class_skipped():
    # class 2 appears in neither: only classes 0 and 1 are averaged
    assert f1_macro([0, 1, 1], [0, 1, 0]) == pytest.approx((2 / 3 + 2 / 3) / 2)


@given(st.integers(0, 2 ** 31), st.sampled_from(["exp", "cube", "affine", "sigmoid"]))
def test_auc_invariant_under_monotone_transform(seed, kind):
    r = np.random.default_rng(seed)
    n = 30
    labels = r.integers(0, 2, n)
    labels[:2] = [0, 1]
    s = np.round(r.standard_normal(n), 1)
    f = {"exp": np.exp, "cube": lambda v: v ** 3, "affine": lambda v: 3 * v - 7,
         "sigmoid": lambda v: 1 / (1 + np.exp(-v))}[kind]
    assert roc_auc(f(s), labels) == roc_auc(s, labels)


@given(st.integers(0, 2 ** 31))
def test_metric_ranges(seed):
    r = np.random.default_rng(seed)
    p, l = r.integers(0, 4, 20), r.integers(0, 4, 20)
    assert 0 <= f1_macro(p, l) <= 1
    assert rmse(r.random(5), r.random(5)) >= 0


def test_empty_inputs_rejected():
    for fn in (roc_auc, f1_macro, rmse):
        with pytest.raises(ValueError):
            fn([], [])


# ------------------------------------------------------------------ objectives
def test_objective_examples():
    m = _metric(quality=0.9, size_mb=10.0)
    assert ev.to_objectives(m, ("quality", "size"), "binary") == [0.9, -10.0]
    r = _metric(quality=3.4, quality_name="rmse")
    assert ev.to_objectives(r, ("quality",), "regression") == [-3.4]


def test_imputation_example():
    m = _metric(gpu_latency_ms=None)
    obj = ev.to_objectives(m, ("quality", "gpu_latency"), "binary", worst=[0.5, -5.0])
    assert obj == [0.8, -5.0 - ev.IMPUTE_EPS]


def test_impute_uses_population_worst():
    vecs = [[1.0, -2.0], [0.5, None], [0.7, -4.0]]
    assert ev.impute(vecs) == [[1.0, -2.0], [0.5, -4.0 - ev.IMPUTE_EPS], [0.7, -4.0]]


def test_empty_axes_rejected():
    with pytest.raises(ValueError, match="empty"):
        ev.to_objectives(_metric(), (), "binary")


def test_all_directions():
    m = _metric()
    axes = ("quality", "cpu_latency", "gpu_latency", "cpu_throughput", "gpu_throughput", "size", "depth",
            "train_seconds")
    assert ev.to_objectives(m, axes, "binary") == [0.8, -1.0, -0.5, 1000.0, 5000.0, -1.0, -2.0, -3.0]


@given(st.integers(0, 2 ** 31), st.sampled_from(["binary", "regression"]))
def test_to_objectives_preserves_dominance(seed, task):
    r = np.random.default_rng(seed)
    fields = ["quality", "cpu_latency_ms", "gpu_latency_ms", "cpu_throughput_ips", "gpu_throughput_ips",
              "size_mb"]
    higher_better = {"quality": task != "regression", "cpu_throughput_ips": True, "gpu_throughput_ips": True}
    b = {f: float(r.uniform(0.1, 10)) for f in fields}
    a = {}
    for f in fields:
        step = float(r.choice([0.0, r.uniform(0, 1)]))
        a[f] = b[f] + step if higher_better.get(f, False) else b[f] - step * 0.09
    improved = next(iter(fields))
    a[improved] = a[improved] + (1.0 if higher_better.get(improved, False) else -0.05)
    axes = ev.REPORT_AXES
    oa = ev.to_objectives(_metric(**a), axes, task)
    ob = ev.to_objectives(_metric(**b), axes, task)
    assert dominates(oa, ob)


# ------------------------------------------------------------------ percent change
def test_percent_examples():
    assert ev.format_percent(ev.percent_change(0.770, 0.756)) == "-1.8%"
    assert ev.format_percent(ev.percent_change(18.646, 14.003)) == "-24.9%"
    assert ev.format_percent(ev.percent_change(2.5, 2.5)) == "+0.0%"
    assert ev.format_percent(ev.percent_change(1.0, 1.039)) == "+3.9%"


def test_percent_unavailable():
    assert ev.percent_change(1.0, None) is None
    assert ev.format_percent(None) == ev.INFINITY


# ------------------------------------------------------------------ devices and timing
@pytest.fixture(scope="module")
def data():
    return synthetic("two_gaussians", n=300, seed=0)


def test_int8_gpu_unavailable(data):
    net = quantization.apply_pdq(mlp(16, (32,), rng=np.random.default_rng(0)))
    for timing in ("modeled", "measured"):
        m = ev.evaluate(net, data, timing=timing, latency_repeats=3, latency_warmup=1, n_batches=2)
        assert m.gpu_latency_ms is None and m.gpu_throughput_ips is None
        assert m.cpu_latency_ms > 0 and m.cpu_throughput_ips > 0
        assert not m.to_json()["available"]["gpu_latency"]


def test_fp16_available_on_both(data):
    net = quantization.to_fp16(mlp(16, (32,), rng=np.random.default_rng(0)))
    m = ev.evaluate(net, data, timing="modeled")
    assert m.gpu_latency_ms is not None and m.cpu_latency_ms is not None


def test_evaluate_fields(data):
    net = mlp(16, (32,), rng=np.random.default_rng(0))
    m = ev.evaluate(net, data, depth=3, timing="modeled")
    assert m.quality_name == "ROC-AUC"
    assert m.quality == quality("binary", 1 / (1 + np.exp(-net.predict(data.x_val)[:, 0])), data.y_val)
    assert m.size_mb == net.model_size_bytes() / 2 ** 20 and m.depth == 3
    assert ev.MetricVector.from_json(m.to_json()) == m


def test_modeled_timing_deterministic_and_ordered(data):
    big = mlp(16, (256,), rng=np.random.default_rng(0), batchnorm=True)
    small = pruning.prune(big.copy(), pruning.PruneSpec(0.75, structured=True))
    a = ev.evaluate(big, data, timing="modeled")
    assert a == ev.evaluate(big, data, timing="modeled")
    b = ev.evaluate(small, data, timing="modeled")
    assert b.cpu_latency_ms < a.cpu_latency_ms and b.size_mb < a.size_mb


def test_measured_latency_smaller_net_soft(data):
    big = mlp(16, (1024, 1024), rng=np.random.default_rng(0), batchnorm=True)
    small = pruning.prune(big.copy(), pruning.PruneSpec(0.9, structured=True))
    prof = ev.PROFILES["cpu"]
    lat_big = [ev.measure_latency(big, prof, data.x_val, repeats=15) for _ in range(3)]
    lat_small = [ev.measure_latency(small, prof, data.x_val, repeats=15) for _ in range(3)]
    assert min(lat_small) <= max(lat_big) * 1.5


@pytest.mark.parametrize("timing", ["modeled", "measured"])
def test_throughput_batch1_matches_latency(data, timing):
    net = mlp(16, (512,), rng=np.random.default_rng(0))
    prof = ev.PROFILES["cpu"]
    if timing == "modeled":
        lat, ips = ev.modeled_latency(net, prof), ev.modeled_throughput(net, prof, batch=1)
    else:
        lat = ev.measure_latency(net, prof, data.x_val, repeats=30)
        ips = ev.measure_throughput(net, prof, data.x_val, batch=1, n_batches=30)
    ratio = ips / (1000.0 / lat)
    assert 0.5 <= ratio <= 2.0


def test_quality_orientation():
    assert oriented("regression", 2.0) == -2.0 and oriented("binary", 0.7) == 0.7


def test_unknown_timing_mode(data):
    with pytest.raises(ValueError, match="timing"):
        ev.evaluate(mlp(16, (4,), rng=np.random.default_rng(0)), data, timing="guess")
