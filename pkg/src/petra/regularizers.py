r"""Training-loss regularizers for low-rank and sparse models.

Orthogonality penalty on SVD factors

.. math::

    L_O(U, V) = \frac{1}{r^2}\left(\|U^T U - I\|_F^2 + \|V^T V - I\|_F^2\right)

Hoyer sparsity of the singular values

.. math::

    L_H(S) = \frac{\|S\|_1}{\|S\|_2}

Both are averaged over the set ``D`` of decomposed layers and weighted by
``lambda_o`` / ``lambda_h``. Three auxiliary terms are available, all off by
default:

* ``l1``: sum of absolute prunable weights.
* ``lai``: mean over parameter tensors of ``max(0, ||g|| - tau)^2`` where ``g``
  is the task-loss gradient (a gradient-magnitude hinge).
* ``norm``: sum over prunable weight tensors of ``||w||_1 / ||w||_2 - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CompositeLoss:
    base: str = "bce"
    lambda_o: float = 0.0
    lambda_h: float = 0.0
    l1: float = 0.0
    lai: float = 0.0
    lai_tau: float = 1.0
    norm: float = 0.0

    def __post_init__(self):
        for name in ("lambda_o", "lambda_h", "l1", "lai", "lai_tau", "norm"):
            v = getattr(self, name)
            if not (v >= 0 and np.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")

    @property
    def has_factor_terms(self) -> bool:
        return self.lambda_o > 0 or self.lambda_h > 0


def orthogonality_loss(U, V) -> float:
    r = U.shape[1]
    if r == 0 or V.shape[1] != r:
        raise ValueError("orthogonality loss needs factors with the same positive rank")
    eye = np.eye(r, dtype=U.dtype)
    a = U.T @ U - eye
    b = V.T @ V - eye
    return float((np.sum(a * a) + np.sum(b * b)) / r ** 2)


def orthogonality_grad(U, V):
    r = U.shape[1]
    if r == 0:
        raise ValueError("rank must be positive")
    eye = np.eye(r, dtype=U.dtype)
    a = U.T @ U - eye
    b = V.T @ V - eye
    val = (np.sum(a * a) + np.sum(b * b)) / r ** 2
    return float(val), 4.0 / r ** 2 * (U @ a), 4.0 / r ** 2 * (V @ b)


def hoyer_loss(S) -> float:
    S = np.asarray(S)
    n2 = np.sqrt(np.sum(S * S))
    if n2 == 0:
        raise ValueError("undefined ratio: all-zero singular values")
    return float(np.sum(np.abs(S)) / n2)


def hoyer_grad(S):
    n1 = np.sum(np.abs(S))
    n2 = np.sqrt(np.sum(S * S))
    if n2 == 0:
        raise ValueError("undefined ratio: all-zero singular values")
    return float(n1 / n2), np.sign(S) / n2 - n1 * S / n2 ** 3


def composite_loss(train_loss: float, factors, lambda_o: float, lambda_h: float, aux: float = 0.0) -> float:
    """Scalar total loss; ``factors`` is a list of ``(U, S, V)`` for the decomposed layers."""
    total = float(train_loss) + float(aux)
    if not factors:
        return total
    d = len(factors)
    if lambda_o:
        total += lambda_o / d * sum(orthogonality_loss(U, V) for U, _, V in factors)
    if lambda_h:
        total += lambda_h / d * sum(hoyer_loss(S) for _, S, _ in factors)
    return total


def sparsity_l1(weights) -> float:
    return float(sum(np.sum(np.abs(w)) for w in weights))


def sparsity_l1_grad(w):
    return np.sign(w)


def norm_loss(weights) -> float:
    total = 0.0
    for w in weights:
        n2 = np.sqrt(np.sum(w * w))
        if n2 == 0:
            continue
        total += np.sum(np.abs(w)) / n2 - 1.0
    return float(total)


def norm_loss_grad(w):
    n2 = np.sqrt(np.sum(w * w))
    if n2 == 0:
        return np.zeros_like(w)
    n1 = np.sum(np.abs(w))
    return np.sign(w) / n2 - n1 * w / n2 ** 3


def lai_loss(grads, tau: float) -> float:
    if not grads:
        return 0.0
    return float(np.mean([max(0.0, np.sqrt(np.sum(g * g)) - tau) ** 2 for g in grads]))


def lai_direction(grads, tau: float):
    """d lai / d g for each gradient tensor; the loss gradient w.r.t. parameters is H @ this."""
    p = len(grads)
    out = []
    for g in grads:
        n = np.sqrt(np.sum(g * g))
        h = max(0.0, n - tau)
        out.append(np.zeros_like(g) if h == 0 else (2.0 * h / p) * g / n)
    return out
