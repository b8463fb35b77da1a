"""First-order optimisers updating a :class:`ParamStore` in place."""

import numpy as np

from . import kernels


class SGD:
    def __init__(self, params, lr, weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, names=None):
        for name in names or self.params.names():
            t = self.params[name]
            if t.grad is None:
                continue
            g = t.grad + self.weight_decay * t.data if self.weight_decay else t.grad
            t.data -= self.lr * g


class Adagrad:
    def __init__(self, params, lr, eps=1e-10):
        self.params = params
        self.lr = lr
        self.eps = eps
        self.sum_sq = {}

    def step(self, names=None):
        for name in names or self.params.names():
            t = self.params[name]
            if t.grad is None:
                continue
            acc = self.sum_sq.setdefault(name, np.zeros_like(t.data))
            acc += t.grad * t.grad
            t.data -= self.lr * t.grad / (np.sqrt(acc) + self.eps)


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, names=None):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name in names or self.params.names():
            p = self.params[name]
            if p.grad is None:
                continue
            if not p.data.flags.c_contiguous:
                p.data = np.ascontiguousarray(p.data)
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            g = np.ascontiguousarray(p.grad, dtype=p.data.dtype)
            kernels.adam_update(p.data.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                                self.lr, self.b1, self.b2, self.eps, c1, c2)


def make_optimizer(kind, params, lr):
    kind = kind.lower()
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    if kind == "adagrad":
        return Adagrad(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")
