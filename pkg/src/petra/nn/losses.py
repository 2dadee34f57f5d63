"""Task losses. Each returns ``(mean loss, d loss / d output)``."""

import numpy as np

LOSSES_BY_TASK = {
    "binary": ("bce", "bce_smooth"),
    "multiclass": ("ce", "ce_smooth"),
    "regression": ("mse", "huber"),
}

LABEL_SMOOTHING = 0.1
HUBER_DELTA = 1.0


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _bce(out, y, smooth):
    z = out[:, 0]
    t = y.astype(out.dtype)
    if smooth:
        t = t * (1 - LABEL_SMOOTHING) + 0.5 * LABEL_SMOOTHING
    # log(1 + e^z) - t z, stable
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = len(z)
    grad = ((_sigmoid(z) - t) / n)[:, None]
    return float(loss.mean()), grad.astype(out.dtype)


def _ce(out, y, smooth):
    n, k = out.shape
    z = out - out.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    t = np.zeros_like(out)
    t[np.arange(n), y.astype(int)] = 1.0
    if smooth:
        t = t * (1 - LABEL_SMOOTHING) + LABEL_SMOOTHING / k
    loss = -(t * logp).sum(axis=1).mean()
    grad = (np.exp(logp) - t) / n
    return float(loss), grad.astype(out.dtype)


def _mse(out, y):
    d = out[:, 0] - y.astype(out.dtype)
    return float(np.mean(d ** 2)), (2 * d / len(d))[:, None].astype(out.dtype)


def _huber(out, y):
    d = out[:, 0] - y.astype(out.dtype)
    a = np.abs(d)
    quad = a <= HUBER_DELTA
    loss = np.where(quad, 0.5 * d ** 2, HUBER_DELTA * (a - 0.5 * HUBER_DELTA))
    g = np.where(quad, d, HUBER_DELTA * np.sign(d))
    return float(loss.mean()), (g / len(d))[:, None].astype(out.dtype)


def task_loss(name: str, out: np.ndarray, y: np.ndarray):
    if name == "bce":
        return _bce(out, y, False)
    if name == "bce_smooth":
        return _bce(out, y, True)
    if name == "ce":
        return _ce(out, y, False)
    if name == "ce_smooth":
        return _ce(out, y, True)
    if name == "mse":
        return _mse(out, y)
    if name == "huber":
        return _huber(out, y)
    raise ValueError(f"unknown task loss {name!r}")


def scores_from_output(task_kind: str, out: np.ndarray) -> np.ndarray:
    """Binary: positive-class probability; multiclass: predicted label; regression: value."""
    if task_kind == "binary":
        return _sigmoid(out[:, 0].astype(np.float64))
    if task_kind == "multiclass":
        return np.argmax(out, axis=1)
    return out[:, 0].astype(np.float64)
