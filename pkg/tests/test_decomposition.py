import math

import numpy as np
import pytest
from helpers import hoyer_oracle, l1_oracle, lai_oracle, norm_oracle, ortho_oracle
from hypothesis import given
from hypothesis import strategies as st

from petra import regularizers as reg
from petra.decomposition import (
    RankCriterion,
    decompose_layer,
    decompose_network,
    select_rank,
    svd,
)
from petra.nn.layers import BatchNorm, Conv2D, Linear
from petra.nn.models import mlp, tiny_resnet
from petra.nn.network import Task

F64 = np.float64
N_CASES = 1000


# ------------------------------------------------------------------ svd
def test_svd_diagonal():
    f = svd(np.diag([3.0, 2.0]))
    assert np.allclose(f.S, [3, 2])
    for M in (f.U, f.V):
        assert np.allclose(np.abs(M), np.eye(2))


def test_svd_rank_one():
    r = np.random.default_rng(0)
    u = r.standard_normal(4)
    v = r.standard_normal(3)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    f = svd(5 * np.outer(u, v))
    assert abs(f.S[0] - 5) < 1e-12 and np.all(np.abs(f.S[1:]) < 1e-12)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 31))
def test_svd_reconstruction_and_orthonormality(m, n, seed):
    W = np.random.default_rng(seed).standard_normal((m, n))
    f = svd(W)
    rec = (f.U * f.S) @ f.V.T
    assert np.linalg.norm(rec - W) / np.linalg.norm(W) < 1e-6
    assert np.allclose(f.U.T @ f.U, np.eye(f.rank), atol=1e-6)
    assert np.allclose(f.V.T @ f.V, np.eye(f.rank), atol=1e-6)
    assert np.all(np.diff(f.S) <= 0) and np.all(f.S >= 0)


def test_svd_random_8x5_vs_loop_product():
    W = np.random.default_rng(1).standard_normal((8, 5))
    f = svd(W)
    rec = np.array([[sum(f.U[i, k] * f.S[k] * f.V[j, k] for k in range(f.rank)) for j in range(5)]
                    for i in range(8)])
    assert np.linalg.norm(rec - W) / np.linalg.norm(W) < 1e-6


def test_svd_conv_matricization():
    conv = Conv2D(3, 4, 3)
    f = svd(conv.params["weight"])
    assert f.U.shape == (4, 4) and f.V.shape == (27, 4)


def test_svd_non_finite_names_matrix():
    from petra.decomposition import DecompositionError
    with pytest.raises(DecompositionError, match="layer 3"):
        svd(np.array([[np.nan, 1.0]]), name="layer 3")


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_rank_r_matrix_reconstructs(m, n, seed):
    r = np.random.default_rng(seed)
    k = int(r.integers(1, min(m, n) + 1))
    W = r.standard_normal((m, k)) @ r.standard_normal((k, n))
    f = svd(W).truncate(k)
    assert np.linalg.norm(f.reconstruct() - W) / np.linalg.norm(W) < 1e-6


# ------------------------------------------------------------------ rank selection
def _energy_oracle(S, t):
    tot = sum(s * s for s in S)
    acc = 0.0
    for r, s in enumerate(S, 1):
        acc += s * s
        if acc / tot >= t - 1e-12:
            return r
    return len(S)


def test_select_rank_examples():
    assert select_rank([3, 2, 1], RankCriterion("energy", 0.9)) == 2
    assert select_rank([3, 2, 1, 0, 0], RankCriterion("energy", 1.0)) == 3
    assert select_rank([10, 1, 0.5], RankCriterion("sv_proportion", 0.08)) == 2
    assert select_rank([3, 2, 1e-12], RankCriterion("explained_variance", 1.0)) == 2
    with pytest.raises(ValueError, match="degenerate spectrum"):
        select_rank([0, 0], RankCriterion())


spectra = st.lists(st.floats(0.0, 100.0), min_size=1, max_size=10).map(
    lambda v: sorted(v, reverse=True)).filter(lambda v: v[0] > 1e-3)


@given(spectra, st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_select_rank_monotone(S, a, b):
    lo, hi = sorted((a, b))
    for kind in ("energy", "explained_variance"):
        r_lo = select_rank(S, RankCriterion(kind, lo))
        r_hi = select_rank(S, RankCriterion(kind, hi))
        assert 1 <= r_lo <= r_hi <= len(S)
    # a ratio cut-off keeps fewer values as it rises
    r_lo = select_rank(S, RankCriterion("sv_proportion", lo))
    r_hi = select_rank(S, RankCriterion("sv_proportion", hi))
    assert 1 <= r_hi <= r_lo <= len(S)


@given(spectra, st.floats(0.01, 1.0))
def test_select_rank_energy_matches_oracle(S, t):
    assert select_rank(S, RankCriterion("energy", t)) == _energy_oracle(S, t)
    prop = select_rank(S, RankCriterion("sv_proportion", t))
    assert prop == max(1, sum(1 for s in S if s >= t * S[0]))


# ------------------------------------------------------------------ decompose_layer
def test_rank_one_layer_keeps_output():
    r = np.random.default_rng(2)
    lin = Linear(6, 5, dtype=F64)
    lin.params["weight"] = np.outer(r.standard_normal(5), r.standard_normal(6))
    x = r.standard_normal((7, 6))
    want = lin.forward(x)
    decompose_layer(lin, RankCriterion("energy", 0.99))
    assert lin.rank == 1
    assert np.allclose(lin.forward(x), want, atol=1e-5)


def test_factor_parameter_arithmetic():
    lin = Linear(10, 10)
    decompose_layer(lin, rank=2)
    assert sum(lin.params[k].size for k in ("U", "S", "V")) == 42


@pytest.mark.parametrize("maker", ["mlp", "resnet"])
def test_full_rank_forward_equivalence(maker):
    r = np.random.default_rng(3)
    if maker == "mlp":
        net = mlp(7, (9, 5), Task("binary"), rng=r, dtype=F64)
        x = r.standard_normal((6, 7))
    else:
        net = tiny_resnet((1, 6, 6), 3, Task("multiclass", 4), rng=r, dtype=F64)
        x = r.standard_normal((4, 1, 6, 6))
    want = net.forward(x)
    decompose_network(net, RankCriterion("energy", 1.0))
    assert np.allclose(net.forward(x), want, atol=1e-5)


def test_decompose_rejects_non_affine():
    with pytest.raises(TypeError):
        decompose_layer(BatchNorm(3))


# ------------------------------------------------------------------ orthogonality loss
def test_orthogonality_examples():
    assert reg.orthogonality_loss(np.eye(2), np.eye(2)) == 0.0
    U = np.array([[math.sqrt(2)]])
    assert abs(reg.orthogonality_loss(U, U) - 2.0) < 1e-12
    with pytest.raises(ValueError):
        reg.orthogonality_loss(np.zeros((3, 0)), np.zeros((3, 0)))


def test_orthogonality_matches_oracle_1000_cases():
    r = np.random.default_rng(10)
    for _ in range(N_CASES):
        m, n = r.integers(1, 7, 2)
        k = int(r.integers(1, 5))
        U, V = r.standard_normal((m, k)), r.standard_normal((n, k))
        assert abs(reg.orthogonality_loss(U, V) - ortho_oracle(U, V)) <= 1e-10 * max(1.0, ortho_oracle(U, V))


@given(st.integers(1, 5), st.integers(0, 2 ** 31))
def test_orthogonality_permutation_invariant(k, seed):
    r = np.random.default_rng(seed)
    U, V = r.standard_normal((6, k)), r.standard_normal((5, k))
    perm = r.permutation(k)
    assert math.isclose(reg.orthogonality_loss(U, V), reg.orthogonality_loss(U[:, perm], V[:, perm]),
                        rel_tol=1e-12, abs_tol=1e-12)


def test_orthogonality_scales_with_rank():
    # block-duplicating a non-orthonormal column set: r doubles, the Gram defects quadruple in count
    r = np.random.default_rng(4)
    U = r.standard_normal((3, 2))
    V = r.standard_normal((3, 2))
    U2 = np.block([[U, np.zeros_like(U)], [np.zeros_like(U), U]])
    V2 = np.block([[V, np.zeros_like(V)], [np.zeros_like(V), V]])
    # two diagonal blocks of the same defect, divided by (2r)^2 instead of r^2
    assert math.isclose(reg.orthogonality_loss(U2, V2), reg.orthogonality_loss(U, V) * 2 / 4, rel_tol=1e-12)
    Q = np.linalg.qr(r.standard_normal((6, 4)))[0]
    assert reg.orthogonality_loss(Q, Q) < 1e-20


# ------------------------------------------------------------------ Hoyer loss
def test_hoyer_examples():
    assert reg.hoyer_loss([1, 0, 0]) == 1.0
    for c in (1e-3, 1.0, 7.5):
        assert math.isclose(reg.hoyer_loss([c] * 4), 2.0, rel_tol=1e-15)
    assert math.isclose(reg.hoyer_loss([3, 4]), 1.4, rel_tol=1e-15)
    with pytest.raises(ValueError, match="undefined ratio"):
        reg.hoyer_loss([0, 0])


def test_hoyer_matches_oracle_1000_cases():
    r = np.random.default_rng(11)
    for _ in range(N_CASES):
        S = np.abs(r.standard_normal(int(r.integers(1, 10))))
        assert abs(reg.hoyer_loss(S) - hoyer_oracle(S)) <= 1e-10


def test_hoyer_scale_invariance_1000_cases():
    r = np.random.default_rng(12)
    for _ in range(N_CASES):
        S = np.abs(r.standard_normal(int(r.integers(1, 10))))
        c = float(np.exp(r.uniform(-5, 5)))
        assert abs(reg.hoyer_loss(c * S) - reg.hoyer_loss(S)) <= 1e-12


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=12).filter(lambda v: max(v) > 1e-6))
def test_hoyer_bounds(S):
    h = reg.hoyer_loss(S)
    assert 1 - 1e-12 <= h <= math.sqrt(len(S)) + 1e-12


# ------------------------------------------------------------------ composite loss
def test_composite_examples():
    assert reg.composite_loss(0.7, [], 0.0, 0.0) == 0.7
    assert reg.composite_loss(0.7, [(np.eye(2), np.ones(2), np.eye(2))], 5.0, 5.0) != 0.7
    U = np.eye(2)
    assert math.isclose(reg.composite_loss(0.5, [(U, np.array([1.0, 0.0]), U)], 0.3, 0.2), 0.5 + 0.2)
    assert reg.composite_loss(0.5, [], 1.0, 1.0) == 0.5


def test_composite_matches_sum_of_parts_1000_cases():
    r = np.random.default_rng(13)
    for _ in range(N_CASES):
        d = int(r.integers(1, 4))
        facs = []
        for _ in range(d):
            k = int(r.integers(1, 4))
            facs.append((r.standard_normal((4, k)), np.abs(r.standard_normal(k)) + 1e-3, r.standard_normal((3, k))))
        lt, lo, lh, aux = r.random(), r.random(), r.random(), r.random()
        want = lt + aux + lo / d * sum(ortho_oracle(U, V) for U, _, V in facs) \
            + lh / d * sum(hoyer_oracle(S) for _, S, _ in facs)
        got = reg.composite_loss(lt, facs, lo, lh, aux)
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


def test_composite_rejects_negative_weights():
    with pytest.raises(ValueError):
        reg.CompositeLoss(lambda_o=-1.0)


# ------------------------------------------------------------------ auxiliary regularizers
def test_aux_examples():
    assert reg.sparsity_l1([np.zeros((3, 3))]) == 0.0
    assert reg.lai_loss([np.full(3, 0.01), np.full(2, 0.1)], tau=1.0) == 0.0
    assert reg.norm_loss([np.zeros(4), np.array([1.0, 0.0])]) == 0.0


def test_aux_match_oracles_1000_cases():
    r = np.random.default_rng(14)
    for _ in range(N_CASES):
        ws = [r.standard_normal(tuple(r.integers(1, 5, int(r.integers(1, 3))))) for _ in range(int(r.integers(1, 4)))]
        tau = float(r.uniform(0, 3))
        assert abs(reg.sparsity_l1(ws) - l1_oracle(ws)) <= 1e-10 * max(1.0, l1_oracle(ws))
        assert abs(reg.norm_loss(ws) - norm_oracle(ws)) <= 1e-10
        assert abs(reg.lai_loss(ws, tau) - lai_oracle(ws, tau)) <= 1e-10 * max(1.0, lai_oracle(ws, tau))


@given(st.integers(0, 2 ** 31))
def test_aux_non_negative(seed):
    r = np.random.default_rng(seed)
    ws = [r.standard_normal((3, 4)), r.standard_normal(5) * r.random()]
    assert reg.sparsity_l1(ws) >= 0
    assert reg.norm_loss(ws) >= -1e-12
    assert reg.lai_loss(ws, float(r.random())) >= 0
