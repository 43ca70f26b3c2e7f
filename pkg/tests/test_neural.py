import numpy as np
import pytest

from freegauss import freeloss, matcore, neural
from freegauss.errors import ParseError, ShapeError, TapeError


def small_net(seed, shape=((3, 4, "tanh"), (4, 4, "tanh"), (4, 2, "identity"))):
    return neural.init_params(shape, matcore.Rng(seed))


def loss_sum(net, x):
    y, _ = neural.forward(net, x)
    return float(y.sum())


def test_forward_zero_net():
    net = small_net(1)
    for layer in net.layers:
        layer.w[:] = 0.0
        layer.b[:] = 0.0
    y, _ = neural.forward(net, np.ones((3, 7)))
    assert np.array_equal(y, np.zeros((2, 7)))


def test_forward_identity_layer():
    net = neural.Mlp([neural.Layer(w=np.eye(4), b=np.zeros(4), act="identity")])
    x = matcore.Rng(2).normal((4, 9))
    y, _ = neural.forward(net, x)
    assert np.array_equal(y, x)


def test_preset_shapes():
    enc = neural.init_params(neural.ENCODER_SHAPE, matcore.Rng(3))
    x = matcore.Rng(4).normal((2, 256))
    codes, _ = neural.forward(enc, x)
    assert codes.shape == (32, 256)
    assert np.all(np.isfinite(codes))
    dec = neural.init_params(neural.DECODER_SHAPE, matcore.Rng(5))
    recon, _ = neural.forward(dec, codes)
    assert recon.shape == (2, 256)


def test_chain_validation():
    good = neural.Layer(w=np.zeros((4, 3)), b=np.zeros(4), act="tanh")
    bad = neural.Layer(w=np.zeros((2, 5)), b=np.zeros(2), act="tanh")
    with pytest.raises(ShapeError):
        neural.Mlp([good, bad])
    with pytest.raises(ShapeError):
        neural.forward(neural.Mlp([good]), np.ones((5, 2)))
    with pytest.raises(ValueError):
        neural.Layer(w=np.zeros((2, 2)), b=np.zeros(2), act="relu")


def test_backward_finite_difference():
    net = small_net(7)
    x = matcore.Rng(8).normal((3, 5))
    y, tape = neural.forward(net, x)
    grads, _ = neural.backward(net, tape, np.ones_like(y))
    eps = 1e-6
    for (gw, gb), layer in zip(grads, net.layers):
        for arr, g in ((layer.w, gw), (layer.b, gb)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + eps
                up = loss_sum(net, x)
                arr[idx] = old - eps
                dn = loss_sum(net, x)
                arr[idx] = old
                fd = (up - dn) / (2 * eps)
                assert abs(g[idx] - fd) / max(abs(fd), 1e-8) < 1e-5


def test_backward_input_gradient():
    net = small_net(9)
    x = matcore.Rng(10).normal((3, 4))
    y, tape = neural.forward(net, x)
    _, dx = neural.backward(net, tape, np.ones_like(y))
    eps = 1e-6
    for i in range(3):
        for j in range(4):
            xp = x.copy()
            xm = x.copy()
            xp[i, j] += eps
            xm[i, j] -= eps
            fd = (loss_sum(net, xp) - loss_sum(net, xm)) / (2 * eps)
            assert abs(dx[i, j] - fd) / max(abs(fd), 1e-8) < 1e-5


def test_backward_zero_and_linearity():
    net = small_net(11)
    x = matcore.Rng(12).normal((3, 6))
    y, tape = neural.forward(net, x)
    grads, dx = neural.backward(net, tape, np.zeros_like(y))
    assert all(np.all(gw == 0) and np.all(gb == 0) for gw, gb in grads)
    assert np.all(dx == 0)

    dy = matcore.Rng(13).normal(y.shape)
    _, t1 = neural.forward(net, x)
    g1, d1 = neural.backward(net, t1, dy)
    _, t2 = neural.forward(net, x)
    g2, d2 = neural.backward(net, t2, 2.0 * dy)
    for (gw1, gb1), (gw2, gb2) in zip(g1, g2):
        assert np.allclose(gw2, 2.0 * gw1, rtol=0, atol=1e-15)
        assert np.allclose(gb2, 2.0 * gb1, rtol=0, atol=1e-15)
    assert np.allclose(d2, 2.0 * d1, rtol=0, atol=1e-15)


def test_tape_single_use_and_mismatch():
    net = small_net(14)
    x = matcore.Rng(15).normal((3, 2))
    y, tape = neural.forward(net, x)
    neural.backward(net, tape, np.ones_like(y))
    with pytest.raises(TapeError):
        neural.backward(net, tape, np.ones_like(y))
    _, tape2 = neural.forward(net, x)
    with pytest.raises(TapeError):
        neural.backward(net, tape2, np.ones((5, 5)))


def test_column_locality():
    net = small_net(16)
    x = matcore.Rng(17).normal((3, 8))
    y, _ = neural.forward(net, x)
    x2 = x.copy()
    x2[:, 3] += 0.5
    y2, _ = neural.forward(net, x2)
    changed = np.any(y != y2, axis=0)
    assert changed[3]
    assert not np.any(changed[np.arange(8) != 3])


def test_adam_one_step_hand_value():
    p = [np.array([0.0])]
    g = [np.array([1.0])]
    state = neural.AdamState.fresh(p, lr=1e-3)
    neural.adam_step(state, p, g)
    assert abs(p[0][0] - (-0.001)) < 1e-6
    assert state.step == 1


def test_adam_zero_grad_noop():
    p = [np.array([1.5, -2.0])]
    state = neural.AdamState.fresh(p)
    neural.adam_step(state, p, [np.zeros(2)])
    assert np.array_equal(p[0], np.array([1.5, -2.0]))


def test_adam_determinism():
    def run():
        net = small_net(20)
        params = neural.param_list(net)
        state = neural.AdamState.fresh(params)
        rng = matcore.Rng(21)
        x = rng.normal((3, 6))
        for _ in range(20):
            y, tape = neural.forward(net, x)
            grads, _ = neural.backward(net, tape, y)  # L = 0.5 sum y^2
            neural.adam_step(state, params, neural.grad_list(grads))
        return [p.copy() for p in params]

    a = run()
    b = run()
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_adam_shape_guard():
    p = [np.zeros(3)]
    state = neural.AdamState.fresh(p)
    with pytest.raises(ShapeError):
        neural.adam_step(state, p, [np.zeros(4)])


def test_sgd_step():
    p = [np.array([1.0])]
    neural.sgd_step(p, [np.array([2.0])], lr=0.5)
    assert p[0][0] == 0.0
    neural.sgd_step(p, [np.array([2.0])], lr=0.0)
    assert p[0][0] == 0.0
    with pytest.raises(ShapeError):
        neural.sgd_step([np.zeros(2)], [np.zeros(3)], 0.1)


def test_adam_first_step_sign_matches_sgd():
    rng = matcore.Rng(30)
    g = rng.normal(10)
    g[np.abs(g) < 1e-3] = 1.0  # keep signs well defined
    p_adam = [np.zeros(10)]
    p_sgd = [np.zeros(10)]
    neural.adam_step(neural.AdamState.fresh(p_adam), p_adam, [g.copy()])
    neural.sgd_step(p_sgd, [g.copy()], lr=1e-3)
    assert np.array_equal(np.sign(p_adam[0]), np.sign(p_sgd[0]))


def test_init_params():
    net = neural.init_params(neural.ENCODER_SHAPE, matcore.Rng(40))
    net2 = neural.init_params(neural.ENCODER_SHAPE, matcore.Rng(40))
    for l1, l2 in zip(net.layers, net2.layers):
        assert np.array_equal(l1.w, l2.w)
        assert np.all(l1.b == 0)
        bound = 1.0 / np.sqrt(l1.w.shape[1])
        assert np.max(np.abs(l1.w)) <= bound
    with pytest.raises(ValueError):
        neural.init_params(neural.ENCODER_SHAPE, matcore.Rng(1), scheme="orthogonal")


def test_composite_spectral_gradient():
    # gradient of free_loss(forward(net, X)) wrt parameters, against central
    # finite differences; SVD-path roundoff dominates, hence the loose 1e-3
    shape = ((3, 4, "tanh"), (4, 4, "identity"))
    net = neural.init_params(shape, matcore.Rng(50))
    x = matcore.Rng(51).normal((3, 16))

    def total_loss():
        y, _ = neural.forward(net, x)
        return freeloss.free_loss(y)

    y, tape = neural.forward(net, x)
    dy = freeloss.free_loss_grad(y)
    grads, _ = neural.backward(net, tape, dy)
    eps = 1e-6
    worst = 0.0
    for (gw, gb), layer in zip(grads, net.layers):
        for arr, g in ((layer.w, gw), (layer.b, gb)):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + eps
                up = total_loss()
                arr[idx] = old - eps
                dn = total_loss()
                arr[idx] = old
                fd = (up - dn) / (2 * eps)
                worst = max(worst, abs(g[idx] - fd) / max(abs(fd), 1e-6))
    assert worst < 1e-3


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = neural.init_params(neural.ENCODER_SHAPE, matcore.Rng(60))
    path = tmp_path / "net.ckpt"
    neural.save_mlp(net, path)
    back = neural.load_mlp(path)
    assert len(back.layers) == len(net.layers)
    for l1, l2 in zip(net.layers, back.layers):
        assert l1.act == l2.act
        assert np.array_equal(l1.w, l2.w)
        assert np.array_equal(l1.b, l2.b)
    # saving the reloaded net reproduces the file byte for byte
    path2 = tmp_path / "net2.ckpt"
    neural.save_mlp(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_parse_errors(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_text("not a checkpoint\n")
    with pytest.raises(ParseError):
        neural.load_mlp(p)

    good = tmp_path / "good.ckpt"
    neural.save_mlp(small_net(1), good)
    lines = good.read_text().splitlines()
    truncated = tmp_path / "trunc.ckpt"
    truncated.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ParseError):
        neural.load_mlp(truncated)

    wrong_count = tmp_path / "count.ckpt"
    broken = list(lines)
    broken[3] = "w 1.0 2.0"
    wrong_count.write_text("\n".join(broken) + "\n")
    with pytest.raises(ParseError):
        neural.load_mlp(wrong_count)
