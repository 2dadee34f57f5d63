"""Built-in desk-scale architectures."""

import numpy as np

from petra.nn.layers import BatchNorm, Conv2D, Flatten, Linear, ReLU
from petra.nn.network import Network, Task


def mlp(input_dim, hidden=(64,), task=Task("binary"), rng=None, dtype=np.float32, batchnorm=False):
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = []
    d = input_dim
    for h in hidden:
        layers.append(Linear(d, h, rng=rng, dtype=dtype))
        if batchnorm:
            layers.append(BatchNorm(h, dtype=dtype))
        layers.append(ReLU())
        d = h
    layers.append(Linear(d, task.output_dim, rng=rng, dtype=dtype))
    return Network(layers, task, (input_dim,), dtype=dtype)


def tiny_resnet(in_shape=(1, 16, 16), width=8, task=Task("multiclass", 10), rng=None, dtype=np.float32):
    """conv-bn-relu, one residual conv-bn block, strided conv-bn-relu, linear head."""
    rng = rng if rng is not None else np.random.default_rng(0)
    c, h, w = in_shape
    layers = [
        Conv2D(c, width, 3, 1, 1, rng=rng, dtype=dtype), BatchNorm(width, dtype=dtype), ReLU(),
        Conv2D(width, width, 3, 1, 1, rng=rng, dtype=dtype), BatchNorm(width, dtype=dtype), ReLU(),
        Conv2D(width, 2 * width, 3, 2, 1, rng=rng, dtype=dtype), BatchNorm(2 * width, dtype=dtype), ReLU(),
        Flatten(),
    ]
    oh, ow = (h + 1) // 2, (w + 1) // 2
    layers.append(Linear(2 * width * oh * ow, task.output_dim, rng=rng, dtype=dtype))
    return Network(layers, task, in_shape, skips=[(3, 4)], dtype=dtype)


def tiny_tcn(length, width=8, kernel=5, task=Task("regression"), rng=None, dtype=np.float32):
    """Two 1-D convolutions (as 1xk Conv2D) over a (1, 1, length) series, linear head."""
    rng = rng if rng is not None else np.random.default_rng(0)
    pad = (0, kernel // 2)
    layers = [
        Conv2D(1, width, (1, kernel), 1, pad, rng=rng, dtype=dtype), BatchNorm(width, dtype=dtype), ReLU(),
        Conv2D(width, width, (1, kernel), 1, pad, rng=rng, dtype=dtype), BatchNorm(width, dtype=dtype), ReLU(),
        Flatten(),
        Linear(width * length, task.output_dim, rng=rng, dtype=dtype),
    ]
    return Network(layers, task, (1, 1, length), dtype=dtype)


ARCHITECTURES = {"mlp": mlp, "tiny_resnet": tiny_resnet, "tiny_tcn": tiny_tcn}
