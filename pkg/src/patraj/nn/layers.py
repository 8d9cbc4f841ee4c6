"""Layers with explicit forward/backward passes.

Each layer caches what its backward pass needs during ``forward``; one
backward call per forward call.  Gradients accumulate into
``Parameter.grad``.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .functional import BCE_EPS, check_finite, mish, mish_grad, sigmoid


class Parameter:
    __slots__ = ("value", "grad", "trainable")

    def __init__(self, value, trainable=True):
        self.value = value
        self.grad = np.zeros_like(value)
        self.trainable = trainable

    @property
    def shape(self):
        return self.value.shape


class Module:
    training = True

    def named_parameters(self, prefix="") -> Iterator[tuple[str, Parameter]]:
        for name, attr in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(attr, Parameter):
                yield full, attr
            elif isinstance(attr, Module):
                yield from attr.named_parameters(full + ".")
            elif isinstance(attr, (list, tuple)):
                for i, item in enumerate(attr):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.named_parameters())

    def trainable_parameters(self) -> dict[str, Parameter]:
        return {k: p for k, p in self.named_parameters() if p.trainable}

    def modules(self) -> Iterator["Module"]:
        yield self
        for attr in vars(self).values():
            if isinstance(attr, Module):
                yield from attr.modules()
            elif isinstance(attr, (list, tuple)):
                for item in attr:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad[...] = 0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for k, p in params.items():
            if state[k].shape != p.value.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.value.shape}")
            p.value[...] = state[k]


def uniform_fan_in(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, dtype=np.float32):
        self.weight = Parameter(uniform_fan_in(rng, in_dim, (in_dim, out_dim), dtype))
        self.bias = Parameter(uniform_fan_in(rng, in_dim, (out_dim,), dtype))
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, dy):
        x = self._x
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.weight.grad += x2.T @ dy2
        self.bias.grad += dy2.sum(axis=0)
        return dy @ self.weight.value.T


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5, dtype=np.float32):
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.shift = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps
        self._cache = None

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return xhat * self.gain.value + self.shift.value

    def backward(self, dy):
        xhat, inv = self._cache
        axes = tuple(range(dy.ndim - 1))
        self.gain.grad += (dy * xhat).sum(axis=axes)
        self.shift.grad += dy.sum(axis=axes)
        dxhat = dy * self.gain.value
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


class Mish(Module):
    def __init__(self):
        self._x = None

    def forward(self, x):
        self._x = x
        return mish(x)

    def backward(self, dy):
        return dy * mish_grad(self._x)


class Dropout(Module):
    """Inverted dropout.  ``freeze_mask`` reuses the last mask (for gradient checks)."""

    def __init__(self, rate, rng):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = rng
        self.freeze_mask = False
        self._mask = None

    def forward(self, x):
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x
        if not (self.freeze_mask and self._mask is not None and self._mask.shape == x.shape):
            keep = 1.0 - self.rate
            self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class DenseBlock(Module):
    """linear -> layer norm -> Mish -> dropout."""

    def __init__(self, in_dim, out_dim, dropout, rng, dtype=np.float32):
        self.linear = Linear(in_dim, out_dim, rng, dtype)
        self.norm = LayerNorm(out_dim, dtype=dtype)
        self.act = Mish()
        self.drop = Dropout(dropout, rng)
        self.out_dim = out_dim

    def forward(self, x):
        y = self.drop.forward(self.act.forward(self.norm.forward(self.linear.forward(x))))
        return check_finite(y, "dense block")

    def backward(self, dy):
        return self.linear.backward(self.norm.backward(self.act.backward(self.drop.backward(dy))))


class FrozenEmbedding(Module):
    """Fixed lookup table; row 0 is the all-zero padding vector."""

    def __init__(self, table, dtype=np.float32):
        table = np.array(table, dtype=dtype)
        if table.ndim != 2 or table.shape[0] < 1:
            raise ValueError("embedding table must be 2-D with a padding row")
        if np.any(table[0] != 0):
            raise ValueError("padding row (index 0) must be all zeros")
        table.setflags(write=False)
        self.table = Parameter(table, trainable=False)

    @property
    def dim(self):
        return self.table.value.shape[1]

    def forward(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        mask = (indices != 0).astype(self.table.value.dtype)
        return self.table.value[indices], mask


class EmbeddingBottleneck(Module):
    """Code group -> one vector.

    lookup -> layer norm -> dropout, masked mean over the group, then a
    dense block projecting to ``out_dim``.
    """

    def __init__(self, table, out_dim, dropout, rng, dtype=np.float32):
        self.embedding = FrozenEmbedding(table, dtype)
        dim = self.embedding.dim
        self.norm = LayerNorm(dim, dtype=dtype)
        self.drop = Dropout(dropout, rng)
        self.dense = DenseBlock(dim, out_dim, dropout, rng, dtype)
        self.out_dim = out_dim
        self._cache = None

    def forward(self, indices):
        vecs, mask = self.embedding.forward(indices)
        h = self.drop.forward(self.norm.forward(vecs))
        count = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
        weights = mask / count
        pooled = (h * weights[:, :, None]).sum(axis=1)
        self._cache = weights
        return self.dense.forward(pooled)

    def backward(self, dy):
        weights = self._cache
        dpooled = self.dense.backward(dy)
        dh = dpooled[:, None, :] * weights[:, :, None]
        self.norm.backward(self.drop.backward(dh))
        # frozen table: no gradient flows to the indices


class SigmoidHead(Module):
    """Linear layer with independent per-class sigmoids and BCE loss."""

    def __init__(self, in_dim, n_classes, rng, dtype=np.float32, eps=BCE_EPS):
        self.linear = Linear(in_dim, n_classes, rng, dtype)
        self.eps = eps
        self._p = None

    def forward(self, x):
        p = sigmoid(self.linear.forward(x))
        self._p = p
        return check_finite(p, "sigmoid head")

    def loss(self, y):
        p = np.clip(self._p.astype(np.float64), self.eps, 1.0 - self.eps)
        y = np.asarray(y, dtype=np.float64)
        return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))

    def backward(self, y):
        """Gradient of the mean BCE w.r.t. the head input."""
        p = self._p
        y = np.asarray(y, dtype=p.dtype)
        inside = (p > self.eps) & (p < 1.0 - self.eps)
        dz = np.where(inside, p - y, 0.0).astype(p.dtype) / p.size
        return self.linear.backward(dz)
