import numpy as np
import pytest

from mvrcodec.errors import DomainError, FormatError, ShapeError, TruncatedError
from mvrcodec.nn import (
    ConvLayer,
    ModelWeights,
    apply_layer,
    conv2d,
    deconv2d,
    leaky_relu,
    load_weights,
    run_stack,
    save_weights,
)


def naive_conv(x, w, b, stride):
    """Tap-by-tap reference with the same padding rule as conv2d."""
    cout, cin, kh, kw = w.shape
    _, h, wd = x.shape
    oh, ow = -(-h // stride), -(-wd // stride)
    pt, pl = kh // 2, kw // 2
    out = np.zeros((cout, oh, ow), dtype=np.float64)
    for co in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0.0
                for ci in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            y = oy * stride + i - pt
                            xx = ox * stride + j - pl
                            if 0 <= y < h and 0 <= xx < wd:
                                acc += float(w[co, ci, i, j]) * float(x[ci, y, xx])
                out[co, oy, ox] = acc + float(b[co])
    return out


def naive_deconv(x, w, b, stride):
    """Scatter reference for the transposed convolution."""
    cout, cin, kh, kw = w.shape
    _, h, wd = x.shape
    oh, ow = h * stride, wd * stride
    pt, pl = kh // 2, kw // 2
    out = np.zeros((cout, oh, ow), dtype=np.float64)
    for ci in range(cin):
        for iy in range(h):
            for ix in range(wd):
                for i in range(kh):
                    for j in range(kw):
                        y = iy * stride + i - pt
                        xx = ix * stride + j - pl
                        if 0 <= y < oh and 0 <= xx < ow:
                            out[:, y, xx] += w[:, ci, i, j].astype(np.float64) * float(
                                x[ci, iy, ix]
                            )
    return out + b.astype(np.float64)[:, None, None]


def test_leaky_relu_values():
    x = np.array([-2.0, -0.5, 0.0, 3.0], dtype=np.float32)
    np.testing.assert_allclose(leaky_relu(x), [-0.4, -0.1, 0.0, 3.0], rtol=1e-6)


def test_conv2d_frozen_tiny():
    # Single channel 3x3 kernel of ones over an integer ramp, stride 1:
    # interior output is the 3x3 block sum.
    x = np.arange(9, dtype=np.float32).reshape(1, 3, 3)
    w = np.ones((1, 1, 3, 3), dtype=np.float32)
    b = np.zeros(1, dtype=np.float32)
    out = conv2d(x, w, b, stride=1)
    assert out.shape == (1, 3, 3)
    assert out[0, 1, 1] == 36.0
    assert out[0, 0, 0] == 0 + 1 + 3 + 4


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv2d_matches_naive(stride, k):
    rng = np.random.default_rng(10 * k + stride)
    x = rng.standard_normal((3, 7, 6)).astype(np.float32)
    w = rng.standard_normal((4, 3, k, k)).astype(np.float32)
    b = rng.standard_normal(4).astype(np.float32)
    got = conv2d(x, w, b, stride=stride)
    want = naive_conv(x, w, b, stride)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("k", [3, 5])
def test_deconv2d_matches_naive(stride, k):
    rng = np.random.default_rng(20 * k + stride)
    x = rng.standard_normal((3, 5, 4)).astype(np.float32)
    w = rng.standard_normal((2, 3, k, k)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    got = deconv2d(x, w, b, stride=stride)
    want = naive_deconv(x, w, b, stride)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-5)


def test_conv_channel_mismatch():
    x = np.zeros((2, 4, 4), dtype=np.float32)
    w = np.zeros((1, 3, 3, 3), dtype=np.float32)
    with pytest.raises(ShapeError):
        conv2d(x, w, np.zeros(1, dtype=np.float32))
    with pytest.raises(DomainError):
        conv2d(np.zeros((3, 4, 4), dtype=np.float32), w,
               np.zeros(1, dtype=np.float32), stride=0)


def make_layer(rng, mode, cin, cout, k, stride, activation="leaky_relu"):
    return ConvLayer(
        mode=mode,
        stride=stride,
        activation=activation,
        weights=rng.standard_normal((cout, cin, k, k)).astype(np.float32),
        bias=rng.standard_normal(cout).astype(np.float32),
    )


def test_apply_layer_activation_order():
    rng = np.random.default_rng(4)
    layer = make_layer(rng, "down", 2, 3, 3, 1)
    x = rng.standard_normal((2, 5, 5)).astype(np.float32)
    pre = conv2d(x, layer.weights, layer.bias, stride=1)
    np.testing.assert_array_equal(apply_layer(layer, x), leaky_relu(pre))


def test_run_stack_shapes():
    rng = np.random.default_rng(5)
    stack = [
        make_layer(rng, "down", 3, 8, 5, 2),
        make_layer(rng, "down", 8, 4, 3, 2, activation="none"),
    ]
    out = run_stack(stack, rng.standard_normal((3, 16, 16)).astype(np.float32))
    assert out.shape == (4, 4, 4)

    up = [make_layer(rng, "up", 4, 2, 5, 2, activation="none")]
    assert run_stack(up, out).shape == (2, 8, 8)


def test_conv_layer_validation():
    rng = np.random.default_rng(6)
    with pytest.raises(DomainError):
        make_layer(rng, "sideways", 2, 2, 3, 1)
    with pytest.raises(DomainError):
        make_layer(rng, "down", 2, 2, 3, 1, activation="gelu")
    with pytest.raises(ShapeError):
        ConvLayer("down", 1, "none",
                  np.zeros((2, 2, 3), dtype=np.float32),
                  np.zeros(2, dtype=np.float32))
    with pytest.raises(ShapeError):
        ConvLayer("down", 1, "none",
                  np.zeros((2, 2, 3, 3), dtype=np.float32),
                  np.zeros(3, dtype=np.float32))


def small_weights(rng, precision="f32"):
    subnets = {
        "mv_encoder": [make_layer(rng, "down", 8, 4, 5, 2, "leaky_relu"),
                       make_layer(rng, "down", 4, 6, 5, 2, "none")],
        "mv_decoder": [make_layer(rng, "up", 6, 15, 5, 2, "none")],
    }
    if precision == "f16":
        for layers in subnets.values():
            for layer in layers:
                layer.weights = layer.weights.astype(np.float16).astype(np.float32)
                layer.bias = layer.bias.astype(np.float16).astype(np.float32)
    from mvrcodec.entropy import default_z_prior

    return ModelWeights(subnets=subnets, quality=1, precision=precision,
                        z_prior=default_z_prior(3, seed=5))


def test_weights_roundtrip_f32(tmp_path):
    rng = np.random.default_rng(7)
    weights = small_weights(rng)
    path = str(tmp_path / "w.mvrw")
    save_weights(weights, path)
    loaded = load_weights(path)
    assert loaded.quality == 1
    assert loaded.precision == "f32"
    for name, layers in weights.subnets.items():
        for a, b in zip(layers, loaded.subnets[name]):
            assert (a.mode, a.stride, a.activation) == (b.mode, b.stride, b.activation)
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.bias, b.bias)
    np.testing.assert_array_equal(weights.z_prior.xs, loaded.z_prior.xs)
    np.testing.assert_array_equal(weights.z_prior.fs, loaded.z_prior.fs)


def test_weights_roundtrip_f16_matches_half_oracle(tmp_path):
    rng = np.random.default_rng(8)
    w32 = small_weights(rng)
    rng = np.random.default_rng(8)
    w16 = small_weights(rng, precision="f16")
    path = str(tmp_path / "w16.mvrw")
    save_weights(w16, path)
    loaded = load_weights(path)
    assert loaded.precision == "f16"
    for name, layers in w32.subnets.items():
        for a, b in zip(layers, loaded.subnets[name]):
            oracle = a.weights.astype(np.float16).astype(np.float32)
            np.testing.assert_array_equal(b.weights, oracle)
    # Widening is exact for values representable in half precision.
    assert np.float32(np.float16(1.0009765625)) == np.float32(1.0009765625)
    assert np.float32(np.float16(0.1)) == np.float32(0.0999755859375)


def test_weights_f16_file_smaller(tmp_path):
    rng = np.random.default_rng(9)
    w32 = small_weights(rng)
    rng = np.random.default_rng(9)
    w16 = small_weights(rng, precision="f16")
    p32, p16 = str(tmp_path / "a.mvrw"), str(tmp_path / "b.mvrw")
    save_weights(w32, p32)
    save_weights(w16, p16)
    n_params = sum(
        layer.weights.size + layer.bias.size
        for layers in w32.subnets.values()
        for layer in layers
    )
    import os

    assert os.path.getsize(p32) - os.path.getsize(p16) == 2 * n_params


def test_weights_file_corruption(tmp_path):
    rng = np.random.default_rng(11)
    path = str(tmp_path / "w.mvrw")
    save_weights(small_weights(rng), path)
    data = open(path, "rb").read()

    with open(path, "wb") as fh:
        fh.write(data[: len(data) // 2])
    with pytest.raises(TruncatedError):
        load_weights(path)

    with open(path, "wb") as fh:
        fh.write(data + b"xx")
    with pytest.raises(FormatError):
        load_weights(path)

    with open(path, "wb") as fh:
        fh.write(b"ZZZZ" + data[4:])
    with pytest.raises(FormatError):
        load_weights(path)
