"""First-order optimizers acting in place on diffcore parameter tensors."""

import numpy as np


class Optimizer:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, maximize=False):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        sign = 1.0 if maximize else -1.0
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.data += sign * self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


class RMSProp(Optimizer):
    def __init__(self, params, lr=1e-3, decay=0.99, eps=1e-8):
        super().__init__(params, lr)
        self.decay, self.eps = decay, eps
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, maximize=False):
        sign = 1.0 if maximize else -1.0
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.v[i] = self.decay * self.v[i] + (1.0 - self.decay) * g * g
            p.data += sign * self.lr * g / (np.sqrt(self.v[i]) + self.eps)
