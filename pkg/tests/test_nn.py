"""MLP, backprop, Adam and serialization tests.

Gradients are checked against 64-bit central finite differences; Adam's first
step against its closed form.
"""

import numpy as np
import pytest

from cfrsma import nn


def finite_diff_param_grads(net, x, loss_fn, h=1e-6):
    """Central-difference dL/dtheta for every parameter entry."""
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            lp = loss_fn(nn.forward(net, x))
            p[idx] = old - h
            lm = loss_fn(nn.forward(net, x))
            p[idx] = old
            g[idx] = (lp - lm) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / denom


@pytest.mark.parametrize("act", ["tanh", "linear"])
def test_backward_matches_finite_differences(act):
    rng = np.random.default_rng(3)
    net = nn.make_mlp(4, 3, eta=2.0, out_activation=act, rng=rng)
    w = rng.standard_normal(3)
    x = rng.standard_normal(4)

    def loss(y):
        return float(np.sum(w * y) + 0.5 * np.sum(y * y))

    y, cache = nn.forward_cached(net, x)
    grads, gx = nn.backward(net, cache, w + y)
    fd = finite_diff_param_grads(net, x, loss)
    for g, f in zip(grads, fd):
        assert rel_err(g, f) < 1e-7

    # input gradient against finite differences
    gx_fd = np.zeros_like(x)
    h = 1e-6
    for i in range(x.size):
        xp = x.copy(); xp[i] += h
        xm = x.copy(); xm[i] -= h
        gx_fd[i] = (loss(nn.forward(net, xp)) - loss(nn.forward(net, xm))) / (2 * h)
    assert rel_err(gx, gx_fd) < 1e-7


def test_backward_batch_equals_sum_of_singles():
    rng = np.random.default_rng(5)
    net = nn.make_mlp(3, 2, eta=2.0, out_activation="linear", rng=rng)
    X = rng.standard_normal((6, 3))
    G = rng.standard_normal((6, 2))
    _, cache = nn.forward_cached(net, X)
    batch_grads, batch_gx = nn.backward(net, cache, G)
    acc = [np.zeros_like(p) for p in net.params()]
    for i in range(6):
        _, c = nn.forward_cached(net, X[i])
        g, gx = nn.backward(net, c, G[i])
        for a, gi in zip(acc, g):
            a += gi
        assert np.allclose(gx, batch_gx[i], rtol=1e-12, atol=1e-14)
    for a, bg in zip(acc, batch_grads):
        assert np.allclose(a, bg, rtol=1e-10, atol=1e-13)


def test_hidden_width_and_init_bounds():
    rng = np.random.default_rng(7)
    net = nn.make_mlp(10, 4, eta=2.0, out_activation="tanh", rng=rng)
    assert net.dims == (10, 20, 4)
    assert np.max(np.abs(net.W1)) <= 1.0 / np.sqrt(10)
    assert np.max(np.abs(net.W2)) <= 1.0 / np.sqrt(20)
    net3 = nn.make_mlp(3, 1, eta=1.5, out_activation="linear", rng=rng)
    assert net3.dims[1] == round(1.5 * 3)
    with pytest.raises(ValueError):
        nn.make_mlp(3, 1, 2.0, "softmax", rng)


def test_tanh_head_bounded_linear_head_not():
    rng = np.random.default_rng(9)
    net = nn.make_mlp(3, 2, 2.0, "tanh", rng)
    big = 100.0 * np.ones(3)
    assert np.all(np.abs(nn.forward(net, big)) <= 1.0)


def test_adam_first_step_closed_form():
    rng = np.random.default_rng(11)
    net = nn.make_mlp(2, 2, 2.0, "linear", rng)
    before = [p.copy() for p in net.params()]
    opt = nn.adam_init(net, lr=0.05)
    grads = [np.full_like(p, 0.3) for p in net.params()]
    nn.adam_step(net, grads, opt)
    # first step: m_hat=g, v_hat=g^2 -> update = -lr*g/(|g|+eps) ~ -lr*sign(g)
    expected = 0.05 * 0.3 / (0.3 + opt.eps)
    for p, b in zip(net.params(), before):
        assert np.allclose(b - p, expected, rtol=1e-9)


def test_adam_zero_grads_keep_weights_and_decay_moments():
    rng = np.random.default_rng(13)
    net = nn.make_mlp(2, 1, 2.0, "linear", rng)
    opt = nn.adam_init(net)
    before = [p.copy() for p in net.params()]
    zeros = [np.zeros_like(p) for p in net.params()]
    nn.adam_step(net, zeros, opt)
    for p, b in zip(net.params(), before):
        assert np.array_equal(p, b)
    assert opt.t == 1
    # with nonzero moments, zero grads decay m by beta1
    grads = [np.ones_like(p) for p in net.params()]
    nn.adam_step(net, grads, opt)
    m_before = [m.copy() for m in opt.m]
    nn.adam_step(net, zeros, opt)
    for m, mb in zip(opt.m, m_before):
        assert np.allclose(m, opt.beta1 * mb, rtol=1e-12)


def test_adam_descends_a_quadratic():
    rng = np.random.default_rng(15)
    net = nn.make_mlp(2, 1, 2.0, "linear", rng)
    opt = nn.adam_init(net, lr=0.01)
    x = np.array([0.7, -0.3])
    target = 2.0

    def loss_val():
        return float((nn.forward(net, x)[0] - target) ** 2)

    first = loss_val()
    for _ in range(300):
        y, cache = nn.forward_cached(net, x)
        grads, _ = nn.backward(net, cache, 2 * (y - target))
        nn.adam_step(net, grads, opt)
    assert loss_val() < 0.01 * first


def test_polyak_contraction():
    rng = np.random.default_rng(17)
    net = nn.make_mlp(3, 2, 2.0, "tanh", rng)
    tgt = nn.make_mlp(3, 2, 2.0, "tanh", rng)
    tau = 1e-3
    diff0 = [t - s for t, s in zip(tgt.params(), net.params())]
    for step in range(5):
        nn.polyak_update(tgt, net, tau)
    for d0, t, s in zip(diff0, tgt.params(), net.params()):
        assert np.allclose(t - s, (1 - tau) ** 5 * d0, rtol=1e-12)
    nn.polyak_update(tgt, net, 1.0)  # tau=1 copies
    for t, s in zip(tgt.params(), net.params()):
        assert np.allclose(t, s, rtol=0, atol=0)
    with pytest.raises(ValueError):
        nn.polyak_update(tgt, net, 1.5)


def test_serialize_roundtrip_and_length():
    rng = np.random.default_rng(19)
    net = nn.make_mlp(5, 3, 2.0, "tanh", rng)
    pv = nn.serialize(net)
    n0, n1, n2 = net.dims
    assert pv.data.size == n1 * n0 + n1 + n2 * n1 + n2
    back = nn.deserialize(pv, net.dims)
    for p, q in zip(net.params(), back.params()):
        assert np.array_equal(p, q)
    assert back.out_activation == "tanh"

    # wire format round trip is bit-exact
    pv2 = nn.ParamVector.from_bytes(pv.to_bytes())
    assert pv2.version == pv.version
    assert pv2.dims == pv.dims
    assert np.array_equal(pv2.data, pv.data)


def test_deserialize_rejects_mismatch():
    rng = np.random.default_rng(21)
    net = nn.make_mlp(4, 2, 2.0, "linear", rng)
    pv = nn.serialize(net)
    with pytest.raises(ValueError):
        nn.deserialize(pv, (4, 8, 3))
    bad = nn.ParamVector(version=99, dims=pv.dims,
                         out_activation=pv.out_activation, data=pv.data)
    with pytest.raises(ValueError):
        nn.deserialize(bad, pv.dims)
    with pytest.raises(ValueError):
        nn.ParamVector.from_bytes(bad.to_bytes()[:14] + b"\x00" * 8)
