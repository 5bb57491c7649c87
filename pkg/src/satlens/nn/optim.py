from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, model, learning_rate: float = 0.01, momentum: float = 0.0):
        self.model = model
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity: dict = {}

    def step(self):
        for i, name, param, grad in self.model.parameters():
            if self.momentum:
                v = self.velocity.get((i, name))
                v = grad.copy() if v is None else self.momentum * v + grad
                self.velocity[(i, name)] = v
                grad = v
            param -= (self.learning_rate * grad).astype(param.dtype, copy=False)


class Adam:
    def __init__(self, model, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.model = model
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for i, name, param, grad in self.model.parameters():
            key = (i, name)
            m = self.m.get(key)
            if m is None:
                m = self.m[key] = np.zeros_like(param)
                self.v[key] = np.zeros_like(param)
            v = self.v[key]
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            update = self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
            param -= update.astype(param.dtype, copy=False)
