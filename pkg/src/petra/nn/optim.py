from __future__ import annotations

import numpy as np

OPTIMIZERS = ("sgd", "sgd_momentum", "adam")


class Optimizer:
    """SGD, SGD with momentum (0.9) or Adam over ``{(layer, name): array}`` parameter dicts."""

    def __init__(self, kind="adam", learning_rate=1e-3, momentum=0.9, betas=(0.9, 0.999), eps=1e-8):
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {kind!r}")
        if not learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        self.kind = kind
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.betas = betas
        self.eps = eps
        self.state: dict = {}
        self.t = 0

    def step(self, net, grads):
        if self.learning_rate == 0:
            return
        self.t += 1
        lr = self.learning_rate
        for key, g in grads.items():
            layer = net.layers[key[0]]
            p = layer.params[key[1]]
            if self.kind == "sgd":
                upd = g
            elif self.kind == "sgd_momentum":
                buf = self.state.get(key)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self.state[key] = buf
                upd = buf
            else:
                b1, b2 = self.betas
                m, v = self.state.get(key, (np.zeros_like(p), np.zeros_like(p)))
                m = b1 * m + (1 - b1) * g
                v = b2 * v + (1 - b2) * g * g
                self.state[key] = (m, v)
                mhat = m / (1 - b1 ** self.t)
                vhat = v / (1 - b2 ** self.t)
                upd = mhat / (np.sqrt(vhat) + self.eps)
            p = (p - lr * upd).astype(p.dtype)
            mask = layer.masks.get(key[1])
            if mask is not None:
                p = p * mask
            layer.params[key[1]] = p
