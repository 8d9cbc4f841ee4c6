"""GRU/LSTM layers with masked steps, stacking and bidirectionality.

A masked step (mask 0) carries the previous state through unchanged, so
leading dummy admissions leave the state at zero for the forward direction
and do not disturb the backward direction's state either.
"""

from __future__ import annotations

import numpy as np

from .functional import check_finite, sigmoid
from .layers import Dropout, Module, Parameter, uniform_fan_in

GRU = "GRU"
LSTM = "LSTM"


class GRULayer(Module):
    """One direction of a GRU (PyTorch gate convention, order r, z, n)."""

    n_gates = 3

    def __init__(self, input_size, hidden_size, rng, reverse=False, dtype=np.float32):
        H = hidden_size
        self.w_x = Parameter(uniform_fan_in(rng, H, (input_size, 3 * H), dtype))
        self.w_h = Parameter(uniform_fan_in(rng, H, (H, 3 * H), dtype))
        self.b_x = Parameter(uniform_fan_in(rng, H, (3 * H,), dtype))
        self.b_h = Parameter(uniform_fan_in(rng, H, (3 * H,), dtype))
        self.hidden_size = H
        self.reverse = reverse
        self._cache = None

    def forward(self, x, mask):
        B, T, _ = x.shape
        H = self.hidden_size
        gx_all = x @ self.w_x.value + self.b_x.value
        h = np.zeros((B, H), dtype=x.dtype)
        out = np.empty((B, T, H), dtype=x.dtype)
        steps = []
        order = range(T - 1, -1, -1) if self.reverse else range(T)
        for t in order:
            m = mask[:, t:t + 1]
            gx = gx_all[:, t]
            gh = h @ self.w_h.value + self.b_h.value
            r = sigmoid(gx[:, :H] + gh[:, :H])
            z = sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
            n = np.tanh(gx[:, 2 * H:] + r * gh[:, 2 * H:])
            h_new = (1.0 - z) * n + z * h
            steps.append((t, h, r, z, n, gh[:, 2 * H:], m))
            h = m * h_new + (1.0 - m) * h
            out[:, t] = h
        self._cache = (x, steps)
        return check_finite(out, "GRU")

    def backward(self, dout):
        x, steps = self._cache
        dx = np.zeros_like(x)
        dh = np.zeros_like(dout[:, 0])
        w_x, w_h = self.w_x.value, self.w_h.value
        for t, h_prev, r, z, n, gh_n, m in reversed(steps):
            dh = dh + dout[:, t]
            dh_new = m * dh
            dh_prev = (1.0 - m) * dh + dh_new * z
            dn_pre = dh_new * (1.0 - z) * (1.0 - n * n)
            dz_pre = dh_new * (h_prev - n) * z * (1.0 - z)
            dr_pre = dn_pre * gh_n * r * (1.0 - r)
            dgx = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
            dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
            self.w_x.grad += x[:, t].T @ dgx
            self.b_x.grad += dgx.sum(axis=0)
            self.w_h.grad += h_prev.T @ dgh
            self.b_h.grad += dgh.sum(axis=0)
            dx[:, t] = dgx @ w_x.T
            dh = dh_prev + dgh @ w_h.T
        return dx


class LSTMLayer(Module):
    """One direction of an LSTM (gate order i, f, g, o)."""

    n_gates = 4

    def __init__(self, input_size, hidden_size, rng, reverse=False, dtype=np.float32):
        H = hidden_size
        self.w_x = Parameter(uniform_fan_in(rng, H, (input_size, 4 * H), dtype))
        self.w_h = Parameter(uniform_fan_in(rng, H, (H, 4 * H), dtype))
        self.bias = Parameter(uniform_fan_in(rng, H, (4 * H,), dtype))
        self.hidden_size = H
        self.reverse = reverse
        self._cache = None

    def forward(self, x, mask):
        B, T, _ = x.shape
        H = self.hidden_size
        gx_all = x @ self.w_x.value + self.bias.value
        h = np.zeros((B, H), dtype=x.dtype)
        c = np.zeros((B, H), dtype=x.dtype)
        out = np.empty((B, T, H), dtype=x.dtype)
        steps = []
        order = range(T - 1, -1, -1) if self.reverse else range(T)
        for t in order:
            m = mask[:, t:t + 1]
            g_all = gx_all[:, t] + h @ self.w_h.value
            i = sigmoid(g_all[:, :H])
            f = sigmoid(g_all[:, H:2 * H])
            g = np.tanh(g_all[:, 2 * H:3 * H])
            o = sigmoid(g_all[:, 3 * H:])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            steps.append((t, h, c, i, f, g, o, tc, m))
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
            out[:, t] = h
        self._cache = (x, steps)
        return check_finite(out, "LSTM")

    def backward(self, dout):
        x, steps = self._cache
        dx = np.zeros_like(x)
        dh = np.zeros_like(dout[:, 0])
        dc = np.zeros_like(dh)
        w_x, w_h = self.w_x.value, self.w_h.value
        for t, h_prev, c_prev, i, f, g, o, tc, m in reversed(steps):
            dh = dh + dout[:, t]
            dh_new = m * dh
            dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
            d_i = dc_new * g * i * (1.0 - i)
            d_f = dc_new * c_prev * f * (1.0 - f)
            d_g = dc_new * i * (1.0 - g * g)
            d_o = dh_new * tc * o * (1.0 - o)
            dgates = np.concatenate([d_i, d_f, d_g, d_o], axis=1)
            self.w_x.grad += x[:, t].T @ dgates
            self.bias.grad += dgates.sum(axis=0)
            self.w_h.grad += h_prev.T @ dgates
            dx[:, t] = dgates @ w_x.T
            dh = (1.0 - m) * dh + dgates @ w_h.T
            dc = (1.0 - m) * dc + dc_new * f
        return dx


_CELLS = {GRU: GRULayer, LSTM: LSTMLayer}


class RecurrentStack(Module):
    """Stacked (optionally bidirectional) recurrent network.

    ``forward`` returns the final state per sequence: the forward direction's
    state after the last step, concatenated with the backward direction's
    state at the earliest step when bidirectional.
    """

    def __init__(self, cell_type, input_size, hidden_size, num_layers=1, bidirectional=False,
                 dropout=0.2, rng=None, dtype=np.float32):
        if cell_type not in _CELLS:
            raise ValueError(f"cell_type must be one of {sorted(_CELLS)}")
        if num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        cls = _CELLS[cell_type]
        self.cell_type = cell_type
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.bidirectional = bidirectional
        self.directions = 2 if bidirectional else 1
        self.layers = []
        self.drops = []
        in_dim = input_size
        for layer in range(num_layers):
            self.layers.append(cls(in_dim, hidden_size, rng, reverse=False, dtype=dtype))
            if bidirectional:
                self.layers.append(cls(in_dim, hidden_size, rng, reverse=True, dtype=dtype))
            if layer < num_layers - 1:
                self.drops.append(Dropout(dropout, rng))
            in_dim = hidden_size * self.directions
        self.output_size = hidden_size * self.directions
        self._cache = None

    def _layer_cells(self, layer):
        d = self.directions
        return self.layers[layer * d:(layer + 1) * d]

    def forward_sequence(self, x, mask):
        """Per-step outputs of the top layer, shape (B, T, output_size)."""
        mask = np.asarray(mask, dtype=x.dtype)
        h = x
        for layer in range(self.num_layers):
            if layer > 0:
                h = self.drops[layer - 1].forward(h)
            outs = [cell.forward(h, mask) for cell in self._layer_cells(layer)]
            h = np.concatenate(outs, axis=2) if len(outs) > 1 else outs[0]
        self._cache = h.shape
        return h

    def backward_sequence(self, dh):
        H = self.hidden_size
        for layer in range(self.num_layers - 1, -1, -1):
            cells = self._layer_cells(layer)
            dx = cells[0].backward(dh[:, :, :H])
            if len(cells) > 1:
                dx = dx + cells[1].backward(dh[:, :, H:])
            dh = dx
            if layer > 0:
                dh = self.drops[layer - 1].backward(dh)
        return dh

    def forward(self, x, mask):
        seq = self.forward_sequence(x, mask)
        H = self.hidden_size
        final = seq[:, -1, :H]
        if self.bidirectional:
            final = np.concatenate([final, seq[:, 0, H:]], axis=1)
        return final

    def backward(self, dfinal):
        shape = self._cache
        H = self.hidden_size
        dseq = np.zeros(shape, dtype=dfinal.dtype)
        dseq[:, -1, :H] = dfinal[:, :H]
        if self.bidirectional:
            dseq[:, 0, H:] = dfinal[:, H:]
        return self.backward_sequence(dseq)
