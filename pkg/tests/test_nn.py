import numpy as np
import pytest

from patraj.errors import CheckpointMismatch, NumericalIntegrityError
from patraj.nn import (
    GRU,
    LSTM,
    Adam,
    DenseBlock,
    Dropout,
    EmbeddingBottleneck,
    FrozenEmbedding,
    LayerNorm,
    Linear,
    Lookahead,
    RecurrentStack,
    SigmoidHead,
    bce_loss,
    check_finite,
    grad_check,
    load_checkpoint,
    mish,
    mish_grad,
    save_checkpoint,
    sigmoid,
)

F64 = np.float64


def test_sigmoid_stable_at_extremes():
    x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
    s = sigmoid(x)
    assert np.all(np.isfinite(s))
    assert s[2] == 0.5 and s[0] == 0.0 and s[-1] == 1.0


def test_mish_values_and_gradient():
    x = np.linspace(-6, 6, 41)
    np.testing.assert_allclose(mish(x), x * np.tanh(np.log1p(np.exp(x))), rtol=1e-12)
    h = 1e-6
    np.testing.assert_allclose(mish_grad(x), (mish(x + h) - mish(x - h)) / (2 * h), atol=1e-8)


def test_bce_clamps():
    assert np.isfinite(bce_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0])))


def test_check_finite():
    with pytest.raises(NumericalIntegrityError):
        check_finite(np.array([1.0, np.nan]), "x")


def test_layer_norm_statistics(rng):
    ln = LayerNorm(16, dtype=F64)
    y = ln.forward(rng.normal(3, 5, size=(4, 16)))
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=1), 1, atol=1e-3)


def test_dropout_modes(rng):
    d = Dropout(0.5, rng)
    x = np.ones((200, 50))
    y = d.forward(x)
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    d.eval()
    assert d.forward(x) is x
    with pytest.raises(ValueError):
        Dropout(1.0, rng)


def test_frozen_embedding(rng):
    table = np.vstack([np.zeros(4), rng.normal(size=(3, 4))])
    emb = FrozenEmbedding(table, F64)
    vecs, mask = emb.forward(np.array([[1, 3, 0]]))
    np.testing.assert_array_equal(vecs[0, 2], 0)
    np.testing.assert_array_equal(mask, [[1, 1, 0]])
    assert emb.trainable_parameters() == {}
    with pytest.raises(ValueError):
        FrozenEmbedding(np.ones((3, 4)))


def test_bottleneck_ignores_padding(rng):
    table = np.vstack([np.zeros(6), rng.normal(size=(5, 6))])
    block = EmbeddingBottleneck(table, 8, 0.0, rng, F64)
    block.eval()
    a = block.forward(np.array([[2, 4, 0, 0]]))
    b = block.forward(np.array([[4, 2]]))
    np.testing.assert_allclose(a, b, atol=1e-12)


def _check(module, loss, back, inputs=None):
    report = grad_check(module, loss, back, inputs=inputs)
    assert report.max_rel_error < 1e-5, report.per_tensor


def test_grad_dense_block(rng):
    blk = DenseBlock(5, 7, 0.3, rng, F64)
    blk.drop.freeze_mask = True
    x = rng.normal(size=(4, 5))
    w = rng.normal(size=(4, 7))
    loss = lambda: float((blk.forward(x) * w).sum())
    def back():
        blk.forward(x)
        return {"x": blk.backward(w)}
    _check(blk, loss, back, {"x": x})


def test_grad_head(rng):
    head = SigmoidHead(6, 3, rng, F64)
    x = rng.normal(size=(5, 6))
    y = (rng.random((5, 3)) < 0.5).astype(float)
    def loss():
        head.forward(x)
        return head.loss(y)
    def back():
        head.forward(x)
        return {"x": head.backward(y)}
    _check(head, loss, back, {"x": x})


@pytest.mark.parametrize("cell", [GRU, LSTM])
@pytest.mark.parametrize("bidirectional", [False, True])
def test_grad_recurrent(rng, cell, bidirectional):
    stack = RecurrentStack(cell, 4, 5, num_layers=2, bidirectional=bidirectional, dropout=0.0,
                           rng=rng, dtype=F64)
    x = rng.normal(size=(3, 4, 4))
    mask = np.array([[1, 1, 1, 1], [0, 1, 1, 1], [0, 0, 0, 1]], dtype=float)
    w = rng.normal(size=(3, stack.output_size))
    loss = lambda: float((stack.forward(x, mask) * w).sum())
    def back():
        stack.forward(x, mask)
        return {"x": stack.backward(w)}
    _check(stack, loss, back, {"x": x})


def test_linear_shapes(rng):
    lin = Linear(3, 2, rng, F64)
    assert lin.forward(np.ones((7, 3))).shape == (7, 2)


def test_adam_minimises_quadratic(rng):
    lin = Linear(3, 1, rng, F64)
    x = rng.normal(size=(64, 3))
    y = x @ np.array([[1.0], [-2.0], [0.5]]) + 0.3
    opt = Lookahead(Adam(lin.trainable_parameters(), lr=0.05))
    for _ in range(600):
        opt.zero_grad()
        lin.backward(2 * (lin.forward(x) - y) / len(x))
        opt.step()
    assert float(np.mean((lin.forward(x) - y) ** 2)) < 1e-4


def test_adam_state_roundtrip(rng):
    lin = Linear(2, 2, rng, F64)
    opt = Adam(lin.trainable_parameters(), lr=0.1)
    lin.forward(np.ones((1, 2)))
    lin.backward(np.ones((1, 2)))
    opt.step()
    state = opt.state_dict()
    opt2 = Adam(lin.trainable_parameters(), lr=0.1)
    opt2.load_state_dict(state)
    for k, v in opt2.state_dict().items():
        np.testing.assert_array_equal(v, state[k])


def test_checkpoint_roundtrip_and_mismatch(tmp_path, rng):
    lin = Linear(3, 2, rng)
    path = tmp_path / "m.npz"
    save_checkpoint(path, lin.state_dict(), "abc", extra={"fold": 1})
    params, _, meta = load_checkpoint(path, expected_fingerprint="abc")
    assert meta["extra"] == {"fold": 1}
    for k, v in lin.state_dict().items():
        np.testing.assert_array_equal(params[k], v)
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path, expected_fingerprint="xyz")


def test_state_dict_load(rng):
    a, b = DenseBlock(3, 4, 0.1, rng), DenseBlock(3, 4, 0.1, rng)
    b.load_state_dict(a.state_dict())
    x = rng.normal(size=(2, 3)).astype(np.float32)
    a.eval()
    b.eval()
    np.testing.assert_array_equal(a.forward(x), b.forward(x))
