import numpy as np
import pytest

from specfas import autodiff as ad
from specfas.autodiff import ShapeError, Tensor, grad_check
from specfas.dataio import FormatError, TruncatedError
from specfas.model import (ModelConfig, SpectralFASNet, batch_norm, cdc_conv, mat_lite_forward,
                           read_checkpoint, spectral_weight_layer, write_checkpoint)

SMALL = dict(height=8, width=8, channels=(3, 4), n_attention=2, d_proj=5)


def cdc_loop(x, k, theta, stride):
    """Per-pixel definition: zero-padded aggregation blended with edge-replicated differences."""
    n, h, w, cin = x.shape
    ks = k.shape[0]
    p = ks // 2
    xz = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    xe = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)), mode="edge")
    ho, wo = (h + 2 * p - ks) // stride + 1, (w + 2 * p - ks) // stride + 1
    out = np.zeros((n, ho, wo, k.shape[3]))
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                ci, cj = i * stride, j * stride
                acc = np.zeros(k.shape[3])
                for a in range(ks):
                    for c in range(ks):
                        tap_z = xz[b, ci + a, cj + c]
                        diff = xe[b, ci + a, cj + c] - x[b, ci, cj]
                        acc += (1 - theta) * tap_z @ k[a, c] + theta * diff @ k[a, c]
                out[b, i, j] = acc
    return out


def test_spectral_weight_layer():
    rng = np.random.default_rng(0)
    x = rng.random((2, 3, 3, 33))
    np.testing.assert_array_equal(spectral_weight_layer(Tensor(x), Tensor(np.ones(33))).data, x)
    s = np.ones(33)
    s[4] = 0.0
    s[7] = 2.0
    out = spectral_weight_layer(Tensor(np.ones((1, 2, 2, 33))), Tensor(s)).data
    assert not out[..., 4].any() and (out[..., 7] == 2.0).all()
    with pytest.raises(ShapeError):
        spectral_weight_layer(Tensor(x), Tensor(np.ones(30)))


def test_cdc_theta_zero_is_vanilla():
    rng = np.random.default_rng(1)
    x, k = rng.standard_normal((2, 7, 6, 3)), rng.standard_normal((3, 3, 3, 4))
    for stride in (1, 2):
        a = cdc_conv(Tensor(x), Tensor(k), 0.0, stride).data
        b = ad.conv2d(Tensor(x), Tensor(k), stride, 1).data
        assert a.tobytes() == b.tobytes()


def test_cdc_theta_one_constant_input_is_zero():
    k = np.random.default_rng(2).standard_normal((3, 3, 2, 5))
    for stride in (1, 2):
        out = cdc_conv(Tensor(np.full((1, 6, 6, 2), 3.7)), Tensor(k), 1.0, stride).data
        np.testing.assert_allclose(out, 0.0, rtol=0, atol=1e-12)


def test_cdc_matches_loop():
    rng = np.random.default_rng(3)
    for theta in (0.0, 0.3, 0.7, 1.0):
        for stride in (1, 2):
            x, k = rng.standard_normal((2, 5, 6, 3)), rng.standard_normal((3, 3, 3, 2))
            np.testing.assert_allclose(cdc_conv(Tensor(x), Tensor(k), theta, stride).data,
                                       cdc_loop(x, k, theta, stride), rtol=1e-12, atol=1e-12)


def test_cdc_gradient_suite():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n, cin, cout = (int(v) for v in rng.integers(1, 4, size=3))
        h, w = (int(v) for v in rng.integers(3, 7, size=2))
        theta = float(rng.random())
        stride = int(rng.integers(1, 3))
        x, k = rng.standard_normal((n, h, w, cin)), rng.standard_normal((3, 3, cin, cout))
        r = rng.standard_normal(cdc_conv(Tensor(x), Tensor(k), theta, stride).shape)
        fx = lambda t: (cdc_conv(t, Tensor(k), theta, stride) * r).sum()
        fk = lambda t: (cdc_conv(Tensor(x), t, theta, stride) * r).sum()
        worst = max(worst, grad_check(fx, x).max_rel_error, grad_check(fk, k).max_rel_error)
    assert worst < 1e-4


def test_mat_lite_uniform_is_average_pooling():
    rng = np.random.default_rng(5)
    f = rng.standard_normal((2, 4, 3, 6))
    pooled, maps = mat_lite_forward(Tensor(f), Tensor(np.zeros((6, 1))), Tensor(np.zeros(1)))
    np.testing.assert_allclose(pooled.data, f.mean(axis=(1, 2)), rtol=0, atol=1e-12)
    np.testing.assert_allclose(maps.data.sum(axis=-1), 1.0, atol=1e-12)


def test_mat_lite_saturated_map_picks_pixel():
    rng = np.random.default_rng(6)
    f = rng.standard_normal((1, 4, 4, 5))
    f[..., 0] = 0.0
    f[0, 2, 1, 0] = 1.0  # channel 0 is an indicator of pixel (2, 1)
    w = np.zeros((5, 1))
    w[0, 0] = 50.0
    pooled, _ = mat_lite_forward(Tensor(f), Tensor(w), Tensor(np.zeros(1)))
    np.testing.assert_allclose(pooled.data[0], f[0, 2, 1], rtol=0, atol=1e-9)


def test_batch_norm_train_and_eval():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 3, 3, 2)) * 5 + 2
    y, (mu, var) = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    np.testing.assert_allclose(y.data.mean(axis=(0, 1, 2)), 0.0, atol=1e-12)
    np.testing.assert_allclose(mu, x.mean(axis=(0, 1, 2)), rtol=1e-12)
    y2, st = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), running=(mu, var))
    assert st is None
    np.testing.assert_allclose(y2.data, y.data, atol=1e-12)


def test_forward_shape_contract():
    net = SpectralFASNet(ModelConfig())
    x = np.random.default_rng(8).random((2, 64, 64, 33))
    out = net.forward(x)
    assert out.logits.shape == (2, 2) and out.z.shape == (2, 128)
    assert net.config.d_feat == 256
    np.testing.assert_allclose(np.linalg.norm(out.z.data, axis=1), 1.0, atol=1e-12)


def test_forward_duplicate_rows_identical():
    net = SpectralFASNet(ModelConfig(**SMALL))
    row = np.random.default_rng(9).random((1, 8, 8, 33))
    out = net.forward(np.concatenate([row, row]))
    assert out.logits.data[0].tobytes() == out.logits.data[1].tobytes()
    assert out.z.data[0].tobytes() == out.z.data[1].tobytes()


def test_forward_rejects_wrong_shape():
    net = SpectralFASNet(ModelConfig(**SMALL))
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 8, 9, 33)))


def test_train_mode_reports_batch_stats():
    net = SpectralFASNet(ModelConfig(**SMALL))
    out = net.forward(np.random.default_rng(10).random((3, 8, 8, 33)), train=True)
    assert len(out.batch_stats) == 2
    before = net.buffers["bn0.running_mean"].copy()
    net.update_running_stats(out.batch_stats)
    np.testing.assert_allclose(net.buffers["bn0.running_mean"], 0.9 * before + 0.1 * out.batch_stats[0][0])


def _model_grad_worst(cfg_kwargs, n_instances, n_probe, train):
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(n_instances):
        cfg = ModelConfig(**{**SMALL, **cfg_kwargs}, seed=trial)
        net = SpectralFASNet(cfg)
        x = rng.random((3, 8, 8, 33))
        name = list(net.params)[trial % len(net.params)]
        r_logit = rng.standard_normal((3, 2))
        r_z = rng.standard_normal((3, cfg.d_proj))

        def f(t, name=name):
            params = {**net.params, name: t}
            out = net.forward(x, params, train=train)
            return (out.logits * r_logit).sum() + (out.z * r_z).sum()

        base = net.params[name].data
        idx = rng.choice(base.size, size=min(n_probe, base.size), replace=False)
        worst = max(worst, grad_check(f, base, indices=idx).max_rel_error)
    return worst


def test_end_to_end_model_gradients():
    # random probe positions in one parameter tensor per instance, cycling through all tensors
    assert _model_grad_worst({"batch_norm": False}, 100, 4, train=False) < 1e-4


def test_end_to_end_model_gradients_with_batch_norm():
    assert _model_grad_worst({}, 100, 4, train=True) < 1e-4


def test_model_input_gradient():
    rng = np.random.default_rng(12)
    net = SpectralFASNet(ModelConfig(**SMALL))
    x = rng.random((2, 8, 8, 33))
    r = rng.standard_normal((2, 2))
    rep = grad_check(lambda t: (net.forward(t, train=True).logits * r).sum(), x,
                     indices=rng.choice(x.size, 40, replace=False))
    assert rep.max_rel_error < 1e-4


def test_checkpoint_roundtrip(tmp_path):
    net = SpectralFASNet(ModelConfig(**SMALL, seed=3))
    net.buffers["bn1.running_var"] = np.arange(4.0) + 0.5
    net.save(tmp_path / "m.spfk", {"train.seed": "3"})
    back, header = SpectralFASNet.load(tmp_path / "m.spfk")
    assert header["train.seed"] == "3"
    assert back.config == net.config
    for k in net.params:
        assert back.params[k].data.tobytes() == net.params[k].data.tobytes()
    for k in net.buffers:
        assert back.buffers[k].tobytes() == net.buffers[k].tobytes()
    x = np.random.default_rng(13).random((2, 8, 8, 33))
    assert back.predict_proba(x).tobytes() == net.predict_proba(x).tobytes()


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "c.spfk"
    write_checkpoint(p, {"a": np.ones(3)}, {"k": "v"})
    data = p.read_bytes()
    p.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        read_checkpoint(p)
    p.write_bytes(data[:-5])
    with pytest.raises(TruncatedError):
        read_checkpoint(p)


def test_predict_proba_rows_sum_to_one():
    net = SpectralFASNet(ModelConfig(**SMALL))
    p = net.predict_proba(np.random.default_rng(14).random((5, 8, 8, 33)), batch_size=2)
    assert p.shape == (5, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
