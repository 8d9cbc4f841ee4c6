"""Adaptive-moment optimizer with an optional lookahead wrapper."""

from __future__ import annotations

import numpy as np

from .layers import Parameter


class Adam:
    def __init__(self, params: dict[str, Parameter], lr=0.001, betas=(0.9, 0.999), eps=1e-8):
        self.params = {k: p for k, p in params.items() if p.trainable}
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad[...] = 0

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.value -= update.astype(p.value.dtype)

    def state_dict(self):
        state = {"step_count": np.array(self.step_count)}
        for k in self.params:
            state[f"m/{k}"] = self.m[k]
            state[f"v/{k}"] = self.v[k]
        return state

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        for k in self.params:
            self.m[k][...] = state[f"m/{k}"]
            self.v[k][...] = state[f"v/{k}"]


class Lookahead:
    """Keeps slow weights and pulls them toward the fast weights every ``k`` steps."""

    def __init__(self, inner: Adam, k=6, alpha=0.5):
        self.inner = inner
        self.k = k
        self.alpha = alpha
        self.slow = {n: p.value.copy() for n, p in inner.params.items()}
        self._since_sync = 0

    @property
    def params(self):
        return self.inner.params

    @property
    def step_count(self):
        return self.inner.step_count

    def zero_grad(self):
        self.inner.zero_grad()

    def step(self):
        self.inner.step()
        self._since_sync += 1
        if self._since_sync >= self.k:
            self._since_sync = 0
            for n, p in self.inner.params.items():
                slow = self.slow[n]
                slow += self.alpha * (p.value - slow)
                p.value[...] = slow

    def state_dict(self):
        state = self.inner.state_dict()
        state["lookahead_since_sync"] = np.array(self._since_sync)
        for n, s in self.slow.items():
            state[f"slow/{n}"] = s
        return state

    def load_state_dict(self, state):
        self.inner.load_state_dict(state)
        self._since_sync = int(state["lookahead_since_sync"])
        for n in self.slow:
            self.slow[n][...] = state[f"slow/{n}"]


def make_optimizer(params, lr=0.001, lookahead=False, lookahead_k=6, lookahead_alpha=0.5):
    opt = Adam(params, lr=lr)
    return Lookahead(opt, lookahead_k, lookahead_alpha) if lookahead else opt
