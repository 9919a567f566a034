import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffmi import nncore as nn


def numeric_grad(f, p, h=1e-5):
    g = np.zeros_like(p.data)
    it = np.nditer(p.data, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p.data[i]
        p.data[i] = old + h
        up = f()
        p.data[i] = old - h
        down = f()
        p.data[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def check_grads(loss_fn, params, tol=1e-5):
    with nn.Tape() as tape:
        loss = loss_fn()
    grads = tape.backward(loss)
    for p in params:
        num = numeric_grad(lambda: float(loss_fn().data), p)
        ana = grads.get(p, np.zeros_like(p.data))
        err = np.linalg.norm(ana - num) / max(np.linalg.norm(num), np.linalg.norm(ana), 1e-8)
        assert err < tol, (p.name, err)


PRIMITIVES = {
    "silu": nn.silu,
    "tanh": nn.tanh,
    "exp": lambda x: nn.exp(x * 0.3),
    "log": lambda x: nn.log(nn.square(x) + 1.0),
    "square": nn.square,
    "relu": lambda x: nn.relu(x + 0.05),
    "logsumexp_rows": lambda x: nn.logsumexp(x, axis=1),
    "logsumexp_all": nn.logsumexp,
    "mean_cols": lambda x: nn.mean(x, axis=0),
    "diag": lambda x: nn.take_diag(nn.matmul(x, nn.Tensor(np.ones((3, 4))))),
    "reshape": lambda x: nn.reshape(x, (3, 4)) * nn.Tensor(np.arange(12.0).reshape(3, 4)),
    "concat": lambda x: nn.concat([x, nn.square(x)], axis=1),
    "layer_norm": nn.layer_norm,
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    p = nn.Parameter(rng.standard_normal((4, 3)), "p")
    fn = PRIMITIVES[name]
    weights = None

    def loss():
        nonlocal weights
        out = fn(p)
        if weights is None:
            weights = np.random.default_rng(1).standard_normal(out.shape)
        return nn.sum(out * nn.Tensor(weights))

    check_grads(loss, [p])


def test_linear_broadcast_and_matmul_gradients():
    rng = np.random.default_rng(0)
    w = nn.Parameter(rng.standard_normal((3, 2)), "w")
    b = nn.Parameter(rng.standard_normal(2), "b")
    x = rng.standard_normal((5, 3))
    check_grads(lambda: nn.sum(nn.square(nn.linear(x, w, b))), [w, b])
    check_grads(lambda: nn.sum(nn.matmul(x, w) * b), [w, b])


def test_residual_mlp_gradients_20_instances():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        lin = nn.Linear(3, 5, rng)
        blocks = [nn.ResidualBlock(5, rng, f"b{i}", norm=seed % 2 == 0) for i in range(2)]
        for blk in blocks:
            if blk.norm is not None:
                blk.norm.gain.data = 1 + 0.3 * rng.standard_normal(5)
                blk.norm.bias.data = 0.3 * rng.standard_normal(5)
        head = nn.Linear(5, 1, rng)
        x = rng.standard_normal((4, 3))

        def loss():
            h = lin(x)
            for blk in blocks:
                h = blk(h)
            return nn.mean(nn.square(head(nn.silu(h))))

        params = lin.parameters() + [p for blk in blocks for p in blk.parameters()] + head.parameters()
        check_grads(loss, params)


def test_identity_and_zero_weight_networks():
    x = np.array([[1.0, -2.0, 3.0]])
    eye = nn.Linear(3, 3, np.random.default_rng(0))
    eye.w.data = np.eye(3)
    assert np.array_equal(eye(x).data, x)
    zero = nn.Linear(3, 2, np.random.default_rng(0), zero=True)
    zero.b.data = np.array([0.5, -1.5])
    out = zero(np.random.default_rng(1).standard_normal((7, 3))).data
    assert np.all(out == np.array([0.5, -1.5]))


def test_two_layer_mlp_matches_hand_forward():
    rng = np.random.default_rng(3)
    mlp = nn.MLP([3, 4, 2], rng, activation="tanh")
    x = np.array([0.2, -0.7, 1.1])
    w1, b1 = mlp.layers[0].w.data, mlp.layers[0].b.data
    w2, b2 = mlp.layers[1].w.data, mlp.layers[1].b.data
    expected = [sum(np.tanh(sum(x[i] * w1[i, j] for i in range(3)) + b1[j]) * w2[j, k]
                    for j in range(4)) + b2[k] for k in range(2)]
    assert np.allclose(mlp(x[None]).data[0], expected, rtol=1e-13)


def test_layer_norm_rows_and_bounded_blocks():
    x = np.random.default_rng(4).standard_normal((6, 8)) * 5 + 3
    y = nn.layer_norm(nn.Tensor(x)).data
    assert np.allclose(y.mean(axis=1), 0) and np.allclose(y.var(axis=1), 1, atol=1e-5)
    blk = nn.ResidualBlock(8, np.random.default_rng(0), norm=True)
    small, big = blk(nn.Tensor(x)).data - x, blk(nn.Tensor(1000 * x)).data - 1000 * x
    # the increment only sees the normalized input, so scaling the input leaves it bounded
    assert np.abs(big).max() < 2 * np.abs(small).max() + 1


def test_constant_loss_gives_zero_gradients():
    p = nn.Parameter(np.ones(3), "p")
    with nn.Tape() as tape:
        loss = nn.sum(p * 0.0) + 4.0
    assert np.all(tape.backward(loss)[p] == 0)


def test_linear_map_gradient_is_replicated_input():
    x = np.array([1.0, 2.0, 3.0])
    w = nn.Parameter(np.zeros((2, 3)), "w")
    with nn.Tape() as tape:
        loss = nn.sum(nn.matmul(w, nn.Tensor(x[:, None])))
    assert np.array_equal(tape.backward(loss)[w], np.tile(x, (2, 1)))


def test_unregistered_inputs_get_no_gradient():
    p = nn.Parameter(np.ones(2), "p")
    plain = nn.Tensor(np.ones(2))
    with nn.Tape() as tape:
        loss = nn.sum(p * plain)
    grads = tape.backward(loss)
    assert set(grads) == {p}


def test_backward_errors():
    p = nn.Parameter(np.ones(3), "p")
    with nn.Tape() as tape:
        out = p * 2.0
    with pytest.raises(nn.TapeError):
        tape.backward(out)
    with nn.Tape() as tape:
        loss = nn.sum(p)
    tape.backward(loss)
    with pytest.raises(nn.TapeError):
        tape.backward(loss)


def test_non_finite_forward_is_an_error():
    with pytest.raises(nn.NonFiniteError):
        nn.exp(nn.Tensor(np.array([1000.0])))
    with pytest.raises(nn.NonFiniteError):
        nn.log(nn.Tensor(np.array([0.0])))


def test_adam_zero_gradient_leaves_params():
    p = nn.Parameter(np.array([1.0, -2.0]), "p")
    opt = nn.Adam([p])
    opt.step({p: np.zeros(2)})
    assert np.array_equal(p.data, [1.0, -2.0])
    assert opt.state.step == 1


def test_adam_single_step_closed_form():
    p = nn.Parameter(np.array([0.0]), "p")
    opt = nn.Adam([p], lr=1e-3)
    opt.step({p: np.array([1.0])})
    # m_hat = 1, v_hat = 1 after bias correction
    assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_constant_gradient_moves_monotonically():
    p = nn.Parameter(np.array([0.0, 0.0]), "p")
    opt = nn.Adam([p], lr=1e-2)
    trail = []
    for _ in range(50):
        opt.step({p: np.array([0.5, -3.0])})
        trail.append(p.data.copy())
    trail = np.array(trail)
    assert np.all(np.diff(trail[:, 0]) < 0) and np.all(np.diff(trail[:, 1]) > 0)


def test_adam_rejects_non_finite_gradient():
    p = nn.Parameter(np.zeros(2), "p")
    with pytest.raises(nn.TrainingDiverged):
        nn.Adam([p]).step({p: np.array([np.nan, 0.0])})


def test_ema_closed_forms():
    p = nn.Parameter(np.ones(3), "p")
    ema = nn.EmaShadow([p], momentum=0.999)
    ema.shadow = [np.zeros(3)]
    for _ in range(1000):
        ema.update()
    assert ema.shadow[0] == pytest.approx(1 - 0.999 ** 1000, abs=1e-12)
    assert 1 - 0.999 ** 1000 == pytest.approx(0.6323, abs=1e-4)
    ema0 = nn.EmaShadow([p], momentum=0.0)
    p.data = np.array([3.0, 4.0, 5.0])
    ema0.update()
    assert np.array_equal(ema0.shadow[0], p.data)


def test_ema_shape_mismatch():
    p = nn.Parameter(np.ones(3), "p")
    ema = nn.EmaShadow([p])
    with pytest.raises(ValueError):
        ema.update([nn.Parameter(np.ones(4), "q")])


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.integers(1, 30))
def test_ema_linearity(a, steps):
    rng = np.random.default_rng(steps)
    p1 = nn.Parameter(np.zeros(4), "p1")
    p2 = nn.Parameter(np.zeros(4), "p2")
    e1, e2 = nn.EmaShadow([p1], 0.9), nn.EmaShadow([p2], 0.9)
    for _ in range(steps):
        v = rng.standard_normal(4)
        p1.data, p2.data = v, a * v
        e1.update()
        e2.update()
        assert np.allclose(e2.shadow[0], a * e1.shadow[0], atol=1e-12)


def test_training_is_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(11)
        mlp = nn.MLP([2, 8, 1], rng, activation="silu")
        opt = nn.Adam(mlp.parameters(), lr=1e-2)
        for _ in range(30):
            x = rng.standard_normal((16, 2))
            with nn.Tape() as tape:
                loss = nn.mean(nn.square(mlp(x) - x[:, :1] * x[:, 1:]))
            opt.step(tape.backward(loss))
        return mlp.state()

    for a, b in zip(run(), run()):
        assert np.array_equal(a, b)
