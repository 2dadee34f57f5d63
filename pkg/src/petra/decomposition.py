"""SVD low-rank decomposition of Linear/Conv2D layers and rank selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from petra.nn.layers import Conv2D, Linear, _Affine
from petra.nn.network import Network
from petra.regularizers import (  # noqa: F401  re-exported
    CompositeLoss,
    composite_loss,
    hoyer_loss,
    lai_loss,
    norm_loss,
    orthogonality_loss,
    sparsity_l1,
)

RANK_CRITERIA = ("energy", "explained_variance", "sv_proportion")
EV_EPS = 1e-10


class DecompositionError(RuntimeError):
    pass


@dataclass
class DecomposedFactors:
    U: np.ndarray  # (m, r)
    S: np.ndarray  # (r,)
    V: np.ndarray  # (n, r)

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T

    def truncate(self, r: int) -> "DecomposedFactors":
        return DecomposedFactors(self.U[:, :r].copy(), self.S[:r].copy(), self.V[:, :r].copy())


@dataclass(frozen=True)
class RankCriterion:
    kind: str = "energy"
    threshold: float = 0.9

    def __post_init__(self):
        if self.kind not in RANK_CRITERIA:
            raise ValueError(f"unknown rank criterion {self.kind!r}")
        if not 0 < self.threshold <= 1:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")


def svd(matrix: np.ndarray, name: str = "matrix") -> DecomposedFactors:
    """Thin SVD with a deterministic sign convention (largest-magnitude entry of each U column positive)."""
    matrix = np.asarray(matrix)
    if matrix.ndim == 4:
        matrix = matrix.reshape(matrix.shape[0], -1)
    if matrix.ndim != 2:
        raise ValueError(f"svd expects a 2-D matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise DecompositionError(f"{name}: non-finite entries")
    try:
        u, s, vt = np.linalg.svd(matrix.astype(np.float64), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"{name}: SVD did not converge") from exc
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    v = vt.T * signs
    dt = matrix.dtype if matrix.dtype in (np.float32, np.float64) else np.float64
    return DecomposedFactors(u.astype(dt), s.astype(dt), v.astype(dt))


def select_rank(S, criterion: RankCriterion) -> int:
    S = np.asarray(S, dtype=np.float64)
    if S.size == 0 or not np.any(S > 0):
        raise ValueError("degenerate spectrum")
    if criterion.kind == "sv_proportion":
        return max(1, int(np.sum(S >= criterion.threshold * S[0])))
    if criterion.kind == "explained_variance":
        S = S[S >= EV_EPS]
    energy = np.cumsum(S ** 2)
    ratio = energy / energy[-1]
    r = int(np.searchsorted(ratio, criterion.threshold - 1e-12, side="left")) + 1
    return min(max(r, 1), len(S))


def decompose_layer(layer: _Affine, criterion: RankCriterion | None = None, rank: int | None = None,
                    name: str = "layer") -> _Affine:
    """Replace the layer weight by rank-r factors U, S, V (in place).

    The rank comes from ``criterion`` unless ``rank`` is given. Already
    decomposed layers are re-factored from their current product.
    """
    if not isinstance(layer, (Linear, Conv2D)):
        raise TypeError(f"cannot decompose a {getattr(layer, 'kind', type(layer).__name__)} layer")
    dtype = layer.params["bias"].dtype
    f = svd(layer.weight_matrix(), name=name)
    if rank is None:
        rank = select_rank(f.S, criterion or RankCriterion())
    rank = int(min(max(rank, 1), f.rank))
    f = f.truncate(rank)
    for k in ("weight", "U", "S", "V"):
        layer.params.pop(k, None)
        layer.masks.pop(k, None)
    bias = layer.params.pop("bias")
    layer.params.update({"U": f.U.astype(dtype), "S": f.S.astype(dtype), "V": f.V.astype(dtype), "bias": bias})
    layer.clear_cache()
    return layer


def decompose_network(net: Network, criterion: RankCriterion) -> list:
    """Decompose every Linear/Conv2D layer; returns the selected ranks."""
    ranks = []
    for i, layer in net.affine_layers():
        decompose_layer(layer, criterion, name=f"layer {i} ({layer.kind})")
        ranks.append(layer.rank)
    return ranks


def factors_of(layer: _Affine) -> DecomposedFactors:
    if not layer.is_decomposed:
        raise ValueError("layer is not decomposed")
    return DecomposedFactors(layer.params["U"], layer.params["S"], layer.params["V"])
