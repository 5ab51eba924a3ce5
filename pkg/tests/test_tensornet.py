import numpy as np
import pytest

from seisbt import tensornet as tn
from seisbt.btloss import bt_loss, bt_loss_backward, cross_correlation
from seisbt.errors import ShapeError, UsageError

SMALL = tn.Architecture(input_shape=(3, 12, 8), conv_channels=(4, 6, 8, 8), embedding_dim=5,
                        projection_dim=7, head_hidden=6, n_classes=3)


def _num_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def _rel(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def test_full_size_parameter_count():
    net = tn.Network.init(tn.Architecture(), seed=0)
    conv = sum(c * i * 9 + c for c, i in zip((16, 32, 64, 128), (3, 16, 32, 64)))
    assert net.n_params(("conv",)) == conv
    assert net.n_params(("embed",)) == 128 * 28 + 28
    assert net.n_params(("proj",)) == 28 * 512 + 512 + 2 * 512
    assert net.n_params(("head",)) == 28 * 128 + 128 + 128 * 2 + 2


def test_output_shapes():
    net = tn.Network.init(tn.Architecture(), seed=0)
    x = np.random.default_rng(0).uniform(size=(4, 3, 65, 28))
    emb, _ = tn.forward_encoder(net, x, "eval")
    z, _ = tn.forward_projector(net, emb, "train")
    logits, probs, _ = tn.forward_classifier(net, emb)
    assert emb.shape == (4, 28) and z.shape == (4, 512) and logits.shape == (4, 2)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)


def test_wrong_input_shape_names_layer():
    net = tn.Network.init(SMALL, 0)
    with pytest.raises(ShapeError) as exc:
        tn.forward_encoder(net, np.zeros((2, 3, 10, 8)))
    assert exc.value.layer == "conv0"


@pytest.mark.parametrize("seed", range(3))
def test_conv_gradients(seed):
    r = np.random.default_rng(seed)
    x, w, b = r.normal(size=(2, 5, 4, 3)), r.normal(size=(4, 3, 3, 3)), r.normal(size=4)
    g = r.normal(size=(2, 5, 4, 4))
    f = lambda: float((tn.conv3x3_forward(x, w, b)[0] * g).sum())
    _, cache = tn.conv3x3_forward(x, w, b)
    dx, dw, db = tn.conv3x3_backward(g, cache)
    assert _rel(dx, _num_grad(f, x)) < 1e-6
    assert _rel(dw, _num_grad(f, w)) < 1e-6
    assert _rel(db, _num_grad(f, b)) < 1e-6


def test_conv_against_scipy_correlation():
    from scipy.signal import correlate2d

    r = np.random.default_rng(0)
    x, w = r.normal(size=(1, 6, 5, 2)), r.normal(size=(3, 2, 3, 3))
    out, _ = tn.conv3x3_forward(x, w, np.zeros(3))
    for o in range(3):
        ref = sum(correlate2d(x[0, :, :, c], w[o, c], mode="same") for c in range(2))
        np.testing.assert_allclose(out[0, :, :, o], ref, atol=1e-12)


def test_pool_relu_gap_gradients():
    r = np.random.default_rng(1)
    x = r.normal(size=(2, 5, 7, 3))
    g = r.normal(size=(2, 2, 3, 3))
    f = lambda: float((tn.maxpool2_forward(x)[0] * g).sum())
    _, cache = tn.maxpool2_forward(x)
    assert _rel(tn.maxpool2_backward(g, cache), _num_grad(f, x)) < 1e-6
    g2 = r.normal(size=(2, 3))
    f2 = lambda: float((tn.gap_forward(x)[0] * g2).sum())
    assert _rel(tn.gap_backward(g2, x.shape), _num_grad(f2, x)) < 1e-6
    g3 = r.normal(size=x.shape)
    f3 = lambda: float((tn.relu_forward(x)[0] * g3).sum())
    assert _rel(tn.relu_backward(g3, tn.relu_forward(x)[1]), _num_grad(f3, x)) < 1e-6


@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradients(train):
    r = np.random.default_rng(2)
    x, gamma, beta = r.normal(size=(6, 4)), r.normal(size=4), r.normal(size=4)
    rm, rv = r.normal(size=4), r.uniform(0.5, 2, size=4)
    g = r.normal(size=(6, 4))

    def f():
        return float((tn.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train)[0] * g).sum())

    _, cache = tn.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train)
    dx, dgamma, dbeta = tn.batchnorm_backward(g, cache)
    assert _rel(dx, _num_grad(f, x)) < 1e-6
    assert _rel(dgamma, _num_grad(f, gamma)) < 1e-6
    assert _rel(dbeta, _num_grad(f, beta)) < 1e-6


def test_batchnorm_running_stats_against_torch():
    torch = pytest.importorskip("torch")
    r = np.random.default_rng(3)
    x = r.normal(size=(8, 5))
    rm, rv = np.zeros(5), np.ones(5)
    out, _ = tn.batchnorm_forward(x, np.ones(5), np.zeros(5), rm, rv, True)
    bn = torch.nn.BatchNorm1d(5, eps=1e-5, momentum=0.1).double()
    ref = bn(torch.tensor(x))
    np.testing.assert_allclose(out, ref.detach().numpy(), atol=1e-10)
    np.testing.assert_allclose(rm, bn.running_mean.numpy(), atol=1e-12)
    np.testing.assert_allclose(rv, bn.running_var.numpy(), atol=1e-12)


def test_affine_and_cross_entropy_gradients():
    r = np.random.default_rng(4)
    x, w, b = r.normal(size=(5, 3)), r.normal(size=(3, 4)), r.normal(size=4)
    labels = np.array([0, 3, 1, 1, 2])

    def f():
        return tn.softmax_cross_entropy(tn.affine_forward(x, w, b)[0], labels)[0]

    logits, _ = tn.affine_forward(x, w, b)
    _, dlogits = tn.softmax_cross_entropy(logits, labels)
    dx, dw, db = tn.affine_backward(dlogits, x, w)
    assert _rel(dx, _num_grad(f, x)) < 1e-6
    assert _rel(dw, _num_grad(f, w)) < 1e-6
    assert _rel(db, _num_grad(f, b)) < 1e-6


def test_encoder_matches_torch_forward_and_backward():
    torch = pytest.importorskip("torch")
    F = torch.nn.functional
    net = tn.Network.init(SMALL, 5)
    x = np.random.default_rng(5).uniform(size=(3, 3, 12, 8))
    emb, cache = tn.forward_encoder(net, x, "train")
    g = np.random.default_rng(6).normal(size=emb.shape)
    grads, dx = tn.backward(net, g, cache)

    p = {k: torch.tensor(v, requires_grad=True) for k, v in net.params.items()}
    tx = torch.tensor(x, requires_grad=True)
    h = tx
    for i in range(4):
        h = F.relu(F.conv2d(h, p[f"conv{i}.w"], p[f"conv{i}.b"], padding=1))
        h = F.max_pool2d(h, 2) if i < 3 else h.mean(dim=(2, 3))
    out = h @ p["embed.w"] + p["embed.b"]
    np.testing.assert_allclose(emb, out.detach().numpy(), atol=1e-12)
    (out * torch.tensor(g)).sum().backward()
    np.testing.assert_allclose(dx, tx.grad.numpy(), atol=1e-10)
    for k in grads:
        np.testing.assert_allclose(grads[k], p[k].grad.numpy(), atol=1e-10, err_msg=k)


def _composed_setup(seed):
    r = np.random.default_rng(seed)
    net = tn.Network.init(SMALL, seed)
    xa, xb = r.uniform(size=(6, 3, 12, 8)), r.uniform(size=(6, 3, 12, 8))
    buffers = {k: v.copy() for k, v in net.buffers.items()}

    def loss():
        net.buffers = {k: v.copy() for k, v in buffers.items()}
        za = tn.forward_projector(net, tn.forward_encoder(net, xa)[0])[0]
        zb = tn.forward_projector(net, tn.forward_encoder(net, xb)[0])[0]
        return bt_loss(cross_correlation(za, zb).C, 5e-3).total

    ea, ca = tn.forward_encoder(net, xa)
    eb, cb = tn.forward_encoder(net, xb)
    za, pa = tn.forward_projector(net, ea)
    zb, pb = tn.forward_projector(net, eb)
    _, gza, gzb = bt_loss_backward(za, zb, 5e-3)
    total = {}
    for grad, cache_p, cache_e in ((gza, pa, ca), (gzb, pb, cb)):
        gp, de = tn.backward(net, grad, cache_p)
        ge, _ = tn.backward(net, de, cache_e, need_input_grad=False)
        for k, v in {**gp, **ge}.items():
            total[k] = total.get(k, 0) + v
    return net, loss, total


@pytest.mark.parametrize("seed", range(5))
def test_composed_bt_gradient(seed):
    net, loss, grads = _composed_setup(seed)
    err = tn.grad_check(loss, net.params, grads, eps=1e-6, n_coords=100, rng=seed)
    assert err <= 1e-4


def test_eval_embedding_is_batch_independent():
    net = tn.Network.init(SMALL, 0)
    x = np.random.default_rng(0).uniform(size=(5, 3, 12, 8))
    batched = tn.embed(net, x)
    single = np.concatenate([tn.embed(net, x[i:i + 1]) for i in range(5)])
    np.testing.assert_allclose(batched, single, rtol=0, atol=1e-12)
    dup = tn.embed(net, np.concatenate([x[:1], x[:1]]))
    assert np.array_equal(dup[0], dup[1])


def test_train_mode_bn_needs_two_rows():
    net = tn.Network.init(SMALL, 0)
    with pytest.raises(UsageError):
        tn.forward_projector(net, np.zeros((1, 5)), "train")


def test_copy_is_deep():
    net = tn.Network.init(SMALL, 0)
    c = net.copy()
    c.params["conv0.w"][0, 0, 0, 0] += 1
    assert net.params["conv0.w"][0, 0, 0, 0] != c.params["conv0.w"][0, 0, 0, 0]
