import copy

import numpy as np
import pytest

from mammopipe import nn

from helpers import gradient_error, random_net


def _blobs(n=40, seed=0, dim=(1, 4, 4)):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = rng.normal(0, 0.3, (n, *dim)) + np.where(y, 1.0, -1.0)[:, None, None, None]
    return x, y


def _tiny(seed=0, dim=(1, 4, 4), classes=2):
    return nn.build_network(dim, [nn.conv(2, 3), nn.relu(), nn.flatten(), nn.dense(4), nn.relu(),
                                  nn.dense(classes), nn.softmax()], seed)


def _params(net):
    return [None if p is None else {k: v.copy() for k, v in p.items()} for p in net.params]


def _same(a, b):
    return all((p is None and q is None) or all(np.array_equal(p[k], q[k]) for k in p) for p, q in zip(a, b))


# --- forward -----------------------------------------------------------------------

def test_zero_weights_give_zero_logits():
    net = nn.build_network((5,), [nn.dense(4), nn.relu(), nn.dense(3)], 0)
    for p in net.params:
        if p is not None:
            p["W"][:] = 0
    out, _ = nn.forward(net, np.random.default_rng(0).normal(size=(6, 5)))
    assert not out.any()


def test_relu_definition():
    net = nn.build_network((3,), [nn.relu()], 0)
    out, _ = nn.forward(net, np.array([[-2.0, 0.0, 3.5]]))
    assert out.tolist() == [[0.0, 0.0, 3.5]]


def test_identity_1x1_conv():
    net = nn.build_network((3, 5, 5), [nn.conv(3, 1)], 0)
    net.params[0]["W"][:] = np.eye(3)[:, :, None, None]
    x = np.random.default_rng(1).normal(size=(2, 3, 5, 5))
    assert np.array_equal(nn.forward(net, x)[0], x)


def test_shape_mismatch_reports_layer():
    with pytest.raises(nn.ShapeError) as exc:
        nn.build_network((1, 4, 4), [nn.conv(2, 3), nn.dense(3)], 0)
    assert exc.value.layer == 1
    net = _tiny()
    with pytest.raises(nn.ShapeError):
        nn.forward(net, np.zeros((1, 1, 5, 5)))


def test_softmax_rows_and_uniform_cross_entropy():
    net = nn.build_network((6,), [nn.dense(4), nn.softmax()], 3)
    p, _ = nn.forward(net, np.random.default_rng(2).normal(size=(8, 6)) * 10)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9) and np.all((p > 0) & (p < 1))
    for c in (2, 3, 7):
        assert nn.cross_entropy(np.full((4, c), 1.0 / c), np.zeros(4, int)) == pytest.approx(np.log(c), abs=1e-9)


# --- backward ----------------------------------------------------------------------

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    for case in range(24):
        net, x, aux = random_net(rng, case)
        assert gradient_error(net, x, aux, rng) < 1e-4, net.summary()


def test_logit_shortcut_matches_softmax_backward():
    net = _tiny(seed=4)
    x, y = _blobs(6, 4)
    p, cache = nn.forward(net, x)
    g_short = nn.backward(net, cache, nn.cross_entropy_logit_grad(p, y), wrt_logits=True)
    dp = np.zeros_like(p)
    dp[np.arange(len(y)), y] = -1.0 / (p[np.arange(len(y)), y] * len(y))
    g_full = nn.backward(net, cache, dp)
    for a, b in zip(g_short, g_full):
        if a is not None:
            assert all(np.allclose(a[k], b[k], atol=1e-12) for k in a)


def test_zero_loss_gradient():
    net, x, aux = random_net(np.random.default_rng(3), 0)
    out, cache = nn.forward(net, x, aux)
    for g in nn.backward(net, cache, np.zeros_like(out)):
        if g is not None:
            assert not any(v.any() for v in g.values())


def test_frozen_conv_has_no_gradient_but_dense_does():
    net = nn.freeze_layers(_tiny(seed=1), nn.first_n(1))
    x, y = _blobs(4)
    p, cache = nn.forward(net, x)
    g = nn.backward(net, cache, nn.cross_entropy_logit_grad(p, y), wrt_logits=True)
    assert g[0] is None and np.any(g[5]["W"])


def test_stale_cache():
    net = _tiny()
    x, y = _blobs(4)
    p, cache = nn.forward(net, x)
    nn.sgdm_step(net, nn.backward(net, cache, nn.cross_entropy_logit_grad(p, y), wrt_logits=True),
                 nn.TrainConfig())
    with pytest.raises(nn.StaleCacheError):
        nn.backward(net, cache, p)


# --- optimiser ---------------------------------------------------------------------

def _const_grads(net, value=1.0):
    return [None if p is None else {k: np.full_like(v, value) for k, v in p.items()} for p in net.params]


def test_zero_gradient_step_is_noop():
    net = _tiny()
    before = _params(net)
    nn.sgdm_step(net, _const_grads(net, 0.0), nn.TrainConfig())
    assert _same(before, net.params)


def test_plain_sgd_when_momentum_zero():
    net = _tiny()
    before = _params(net)
    g = [None if p is None else {k: np.random.default_rng(5).normal(size=v.shape) for k, v in p.items()}
         for p in net.params]
    nn.sgdm_step(net, g, nn.TrainConfig(learn_rate=0.1, momentum=0.0))
    for b, p, gi in zip(before, net.params, g):
        if p is not None:
            assert all(np.array_equal(p[k], b[k] - 0.1 * gi[k]) for k in p)


def test_momentum_recurrence_by_hand():
    net = _tiny()
    before = _params(net)
    cfg = nn.TrainConfig(learn_rate=0.01, momentum=0.9)
    g = _const_grads(net, 2.0)
    nn.sgdm_step(net, g, cfg)
    nn.sgdm_step(net, g, cfg)
    v1 = -0.01 * 2.0
    v2 = 0.9 * v1 - 0.01 * 2.0
    assert np.allclose(net.params[0]["W"], before[0]["W"] + v1 + v2, atol=1e-15)


def test_head_layers_use_multiplier():
    net = nn.replace_head(_tiny(classes=3), None, 2)
    before = _params(net)
    nn.sgdm_step(net, _const_grads(net, 1.0), nn.TrainConfig(learn_rate=0.01, head_lr_multiplier=10, momentum=0))
    assert np.allclose(net.params[0]["b"], before[0]["b"] - 0.01)
    assert np.allclose(net.params[3]["b"], before[3]["b"] - 0.01)
    assert np.allclose(net.params[5]["b"], before[5]["b"] - 0.1)


def test_non_finite_gradient_aborts_untouched():
    net = _tiny()
    before = _params(net)
    g = _const_grads(net, 1.0)
    g[5]["W"][0, 0] = np.nan
    with pytest.raises(nn.NonFiniteGradientError):
        nn.sgdm_step(net, g, nn.TrainConfig())
    assert _same(before, net.params)


def test_train_config_validation():
    for kw in ({"max_epochs": 0}, {"mini_batch": 0}, {"learn_rate": -1.0}, {"momentum": 1.0}):
        with pytest.raises(ValueError):
            nn.TrainConfig(**kw)


# --- transfer ----------------------------------------------------------------------

def test_freeze_all_leaves_params_bitwise():
    net = nn.freeze_layers(_tiny(), lambda i, layer: True)
    before = _params(net)
    x, y = _blobs(20)
    net, hist = nn.train(net, x, y, nn.TrainConfig(max_epochs=2, learn_rate=0.5))
    assert _same(before, net.params)
    assert hist[0]["train_loss"] == hist[1]["train_loss"]


def test_freeze_none_equals_full_training():
    x, y = _blobs(20)
    cfg = nn.TrainConfig(max_epochs=3, learn_rate=0.05)
    a, ha = nn.train(nn.freeze_layers(_tiny(), lambda i, layer: False), x, y, cfg, val=(x, y))
    b, hb = nn.train(_tiny(), x, y, cfg, val=(x, y))
    assert ha == hb and _same(_params(a), b.params)


def test_replace_head_splice():
    base = nn.mininet((2, 16, 16), 4, seed=1)
    before = _params(base)
    s1 = nn.replace_head(base, None, 7, seed=2)
    assert s1.output_dim == 7 and _same(before[:8], s1.params[:8])
    assert nn.forward(s1, np.zeros((2, 2, 16, 16)))[0].shape == (2, 7)
    s2 = nn.replace_head(base, [nn.dense(3), nn.softmax()], 3, n_remove=3)
    assert s2.output_dim == 3 and s2.layers[-2].head and not s2.layers[0].head
    assert _same(before, base.params)
    with pytest.raises(ValueError):
        nn.replace_head(base, None, 7, n_remove=2)
    with pytest.raises(ValueError):
        nn.replace_head(base, [nn.dense(5), nn.softmax()], 3)
    with pytest.raises(nn.ShapeError):
        nn.replace_head(base, [nn.relu(), nn.dense(3), nn.softmax()], 3, n_remove=8)


def test_head_only_training_loss_decreases():
    x, y = _blobs(40, seed=3)
    net = nn.replace_head(_tiny(seed=9), None, 2)
    net = nn.freeze_layers(net, lambda i, layer: not layer.head)
    _, hist = nn.train(net, x, y, nn.TrainConfig(max_epochs=10, learn_rate=0.01, momentum=0.5))
    losses = [h["train_loss"] for h in hist]
    assert all(b < a + 1e-12 for a, b in zip(losses, losses[1:])) and losses[-1] < losses[0]


def test_separable_blobs_reach_full_accuracy():
    x, y = _blobs(40, seed=5)
    _, hist = nn.train(_tiny(seed=2), x, y, nn.TrainConfig(max_epochs=30, learn_rate=0.05))
    assert hist[-1]["train_acc"] == 1.0


def test_zero_learning_rate_is_flat():
    x, y = _blobs(20)
    net = _tiny()
    before = _params(net)
    net, hist = nn.train(net, x, y, nn.TrainConfig(max_epochs=3, learn_rate=0.0))
    assert _same(before, net.params) and len({h["train_loss"] for h in hist}) == 1


def test_training_is_deterministic():
    x, y = _blobs(30)
    cfg = nn.TrainConfig(max_epochs=3, learn_rate=0.05, seed=11)
    a, ha = nn.train(_tiny(), x, y, cfg, val=(x[:5], y[:5]))
    b, hb = nn.train(_tiny(), x, y, cfg, val=(x[:5], y[:5]))
    assert ha == hb and nn.encode_checkpoint(a) == nn.encode_checkpoint(b)


def test_frozen_prefix_cache_matches_uncached_path():
    # freezing the conv block must give the same result as zero-lr conv training
    x, y = _blobs(20, seed=8)
    cfg = nn.TrainConfig(max_epochs=2, learn_rate=0.05, head_lr_multiplier=1.0, seed=3)
    frozen, hf = nn.train(nn.freeze_layers(_tiny(), nn.first_n(2)), x, y, cfg)
    net = _tiny()
    rng = np.random.default_rng(3)
    for _ in range(2):
        order = rng.permutation(len(x))
        for s in range(0, len(x), cfg.mini_batch):
            idx = order[s:s + cfg.mini_batch]
            p, cache = nn.forward(net, x[idx])
            g = nn.backward(net, cache, nn.cross_entropy_logit_grad(p, y[idx]), wrt_logits=True)
            g[0] = {k: np.zeros_like(v) for k, v in net.params[0].items()}
            nn.sgdm_step(net, g, cfg)
    assert np.allclose(net.params[5]["W"], frozen.params[5]["W"], atol=1e-12)


def test_training_errors():
    net = _tiny()
    with pytest.raises(ValueError):
        nn.train(net, np.zeros((0, 1, 4, 4)), np.zeros(0, int), nn.TrainConfig())
    with pytest.raises(ValueError):
        nn.train(net, np.zeros((2, 1, 4, 4)), np.array([0, 5]), nn.TrainConfig())


# --- checkpoints -------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    net = nn.replace_head(nn.mininet((2, 8, 8), 4, 0, global_pool=True), None, 3)
    net = nn.freeze_layers(net, nn.first_n(3))
    nn.save_checkpoint(net, tmp_path / "a.mmpn")
    back = nn.load_checkpoint(tmp_path / "a.mmpn")
    assert [layer.describe() for layer in back.layers] == [layer.describe() for layer in net.layers]
    assert [(layer.frozen, layer.head) for layer in back.layers] == [(l.frozen, l.head) for l in net.layers]
    for p, q in zip(net.params, back.params):
        if p is not None:
            assert all(np.array_equal(p[k].astype(np.float32), q[k]) for k in p)
    assert nn.encode_checkpoint(back) == nn.encode_checkpoint(net)


def test_checkpoint_rejects_garbage():
    with pytest.raises(nn.CheckpointError):
        nn.decode_checkpoint(b"NOPE" + bytes(20))
    data = nn.encode_checkpoint(_tiny())
    with pytest.raises(nn.CheckpointError):
        nn.decode_checkpoint(data[:-3])


def test_history_csv_header():
    x, y = _blobs(10)
    _, hist = nn.train(_tiny(), x, y, nn.TrainConfig(max_epochs=2))
    lines = nn.history_csv(hist).splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,train_acc,val_acc" and len(lines) == 3
    assert lines[1].split(",")[2] == ""
    assert copy.deepcopy(hist) == hist
