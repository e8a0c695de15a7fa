import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lip2tongue import functional as fn
from lip2tongue.errors import ConfigError, DimensionError
from lip2tongue.functional import BatchNormStats
from lip2tongue.tensor import Tensor, precision

from conftest import gradcheck


def conv_oracle(x, k, b, stride, pad):
    x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    C_out, C_in, kh, kw = k.shape
    Ho = (x.shape[1] - kh) // stride + 1
    Wo = (x.shape[2] - kw) // stride + 1
    out = np.zeros((C_out, Ho, Wo))
    for o in range(C_out):
        for i in range(Ho):
            for j in range(Wo):
                acc = b[o]
                for c in range(C_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += x[c, i * stride + u, j * stride + v] * k[o, c, u, v]
                out[o, i, j] = acc
    return out


def pool_oracle(x, w, s):
    C, H, W = x.shape
    Ho, Wo = (H - w) // s + 1, (W - w) // s + 1
    out = np.empty((C, Ho, Wo))
    for c in range(C):
        for i in range(Ho):
            for j in range(Wo):
                out[c, i, j] = x[c, i * s : i * s + w, j * s : j * s + w].max()
    return out


# -- conv2d -------------------------------------------------------------------


def test_conv_all_ones():
    out = fn.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]))
    assert out.shape == (1, 2, 2)
    assert np.all(out.data == 9.0)


def test_conv_identity_kernel():
    x = np.random.default_rng(0).random((1, 5, 6)).astype(np.float32)
    out = fn.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
    assert np.array_equal(out.data, x)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(3)
    x, k, b = rng.normal(size=(2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    with precision(np.float64):
        out = fn.conv2d(Tensor(x), Tensor(k), Tensor(b))
    assert np.max(np.abs(out.data - conv_oracle(x, k, b, 1, 0))) < 1e-6


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError, match="axis -3"):
        fn.conv2d(Tensor(np.ones((2, 5, 5))), Tensor(np.ones((1, 3, 3, 3))))


def test_conv_kernel_too_large():
    with pytest.raises(DimensionError):
        fn.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))


@settings(max_examples=60, deadline=None)
@given(
    B=st.integers(1, 2), C=st.integers(1, 3), O=st.integers(1, 3), H=st.integers(3, 9), W=st.integers(3, 9),
    k=st.integers(1, 3), stride=st.integers(1, 3), pad=st.integers(0, 2), seed=st.integers(0, 2**16),
)
def test_conv_shape_fuzz(B, C, O, H, W, k, stride, pad, seed):
    rng = np.random.default_rng(seed)
    x, K, b = rng.normal(size=(B, C, H, W)), rng.normal(size=(O, C, k, k)), rng.normal(size=O)
    with precision(np.float64):
        out = fn.conv2d(Tensor(x), Tensor(K), Tensor(b), stride=stride, padding=pad)
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    assert out.shape == (B, O, Ho, Wo)
    assert np.allclose(out.data[0], conv_oracle(x[0], K, b, stride, pad), atol=1e-9)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_gradcheck(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    arrays = {"x": rng.normal(size=(2, 2, 6, 5)), "k": rng.normal(size=(3, 2, 3, 3)), "b": rng.normal(size=3)}

    def loss(t):
        y = fn.conv2d(t["x"], t["k"], t["b"], stride=stride, padding=pad)
        return (y * y).mean()

    errs = gradcheck(loss, arrays, n_points=12)
    assert max(errs.values()) < 1e-6, errs


# -- maxpool ------------------------------------------------------------------


def test_pool_single_window():
    out = fn.maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
    assert out.data.tolist() == [[[4.0]]]


def test_pool_constant():
    out = fn.maxpool2d(Tensor(np.full((2, 6, 6), 0.7)), 2, 2)
    assert np.all(out.data == np.float32(0.7))


def test_pool_matches_oracle():
    x = np.random.default_rng(5).normal(size=(1, 6, 6))
    with precision(np.float64):
        out = fn.maxpool2d(Tensor(x), 2, 2)
    assert np.array_equal(out.data, pool_oracle(x, 2, 2))


def test_pool_window_too_large():
    with pytest.raises(DimensionError):
        fn.maxpool2d(Tensor(np.ones((1, 2, 3))), 3, 1)


def test_pool_tie_goes_to_first():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    fn.maxpool2d(x, 2).sum().backward()
    assert x.grad.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]


@settings(max_examples=50, deadline=None)
@given(C=st.integers(1, 3), H=st.integers(2, 10), W=st.integers(2, 10), w=st.integers(1, 3),
       s=st.integers(1, 3), seed=st.integers(0, 2**16))
def test_pool_shape_fuzz(C, H, W, w, s, seed):
    if w > min(H, W):
        return
    x = np.random.default_rng(seed).normal(size=(C, H, W))
    with precision(np.float64):
        out = fn.maxpool2d(Tensor(x), w, s)
    assert np.array_equal(out.data, pool_oracle(x, w, s))


def test_pool_gradcheck():
    x = np.random.default_rng(6).permutation(2 * 2 * 6 * 6).reshape(2, 2, 6, 6) * 0.1

    def loss(t):
        y = fn.maxpool2d(t["x"], 2, 2)
        return (y * y).sum()

    errs = gradcheck(loss, {"x": x}, n_points=20)
    assert errs["x"] < 1e-6


# -- dense --------------------------------------------------------------------


def test_dense_identity_and_bias():
    x = Tensor([1.5, -2.0])
    assert np.array_equal(fn.dense(x, Tensor(np.eye(2)), Tensor([0.0, 0.0])).data, x.data)
    assert fn.dense(x, Tensor(np.zeros((2, 2))), Tensor([1.0, 2.0])).data.tolist() == [1.0, 2.0]


def test_dense_matches_loop():
    rng = np.random.default_rng(7)
    x, W, b = rng.normal(size=8), rng.normal(size=(4, 8)), rng.normal(size=4)
    with precision(np.float64):
        out = fn.dense(Tensor(x), Tensor(W), Tensor(b)).data
    ref = [sum(W[o, i] * x[i] for i in range(8)) + b[o] for o in range(4)]
    assert np.max(np.abs(out - ref)) < 1e-6


def test_dense_shape_mismatch():
    with pytest.raises(DimensionError):
        fn.dense(Tensor(np.ones(3)), Tensor(np.ones((2, 4))))


@settings(max_examples=50, deadline=None)
@given(B=st.integers(1, 4), D=st.integers(1, 9), O=st.integers(1, 9), seed=st.integers(0, 2**16))
def test_dense_shape_fuzz(B, D, O, seed):
    rng = np.random.default_rng(seed)
    x, W, b = rng.normal(size=(B, D)), rng.normal(size=(O, D)), rng.normal(size=O)
    with precision(np.float64):
        out = fn.dense(Tensor(x), Tensor(W), Tensor(b))
    assert out.shape == (B, O)
    assert np.allclose(out.data, x @ W.T + b)


def test_dense_gradcheck():
    rng = np.random.default_rng(8)
    arrays = {"x": rng.normal(size=(3, 5)), "W": rng.normal(size=(4, 5)), "b": rng.normal(size=4)}
    errs = gradcheck(lambda t: (fn.dense(t["x"], t["W"], t["b"]) ** 2).sum(), arrays)
    assert max(errs.values()) < 1e-6, errs


# -- activations ----------------------------------------------------------------


def test_activation_values():
    assert fn.sigmoid(Tensor([0.0])).item() == 0.5
    assert fn.leaky_relu(Tensor([-1.0]), 0.3).item() == pytest.approx(-0.3)
    assert fn.activation(Tensor([0.0]), "tanh").item() == 0.0
    with pytest.raises(ConfigError):
        fn.activation(Tensor([0.0]), "relu6")


def test_sigmoid_saturates_without_overflow():
    out = fn.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert out.tolist() == [0.0, 1.0]


@pytest.mark.parametrize("kind", ["sigmoid", "tanh", "leaky_relu"])
def test_activation_gradcheck(kind):
    x = np.random.default_rng(9).normal(size=(4, 5))
    x[np.abs(x) < 0.05] += 0.2  # keep away from the leaky kink
    errs = gradcheck(lambda t: (fn.activation(t["x"], kind) ** 2).sum(), {"x": x}, n_points=20)
    assert errs["x"] < 1e-4


# -- batchnorm ----------------------------------------------------------------


def _bn(x, gamma, beta, mode="train", stats=None):
    C = x.shape[1]
    stats = stats or BatchNormStats.fresh(C, np.float64)
    return fn.batchnorm(Tensor(x), Tensor(gamma), Tensor(beta), stats, mode), stats


def test_bn_constant_batch():
    with precision(np.float64):
        out, _ = _bn(np.full((4, 3), 2.5), np.ones(3), np.zeros(3))
        assert np.allclose(out.data, 0.0)
        out, _ = _bn(np.full((4, 3), 2.5), np.ones(3), np.full(3, 5.0))
        assert np.allclose(out.data, 5.0)


def test_bn_moments():
    x = np.random.default_rng(10).normal(3.0, 2.0, size=(16, 4, 5, 5))
    with precision(np.float64):
        out, _ = _bn(x, np.ones(4), np.zeros(4))
    m = out.data.mean(axis=(0, 2, 3))
    v = out.data.var(axis=(0, 2, 3))
    assert np.all(np.abs(m) < 1e-6)
    assert np.all(np.abs(v - 1) < 1e-4)


def test_bn_running_stats_and_infer():
    x = np.random.default_rng(11).normal(1.0, 3.0, size=(50, 2))
    with precision(np.float64):
        _, stats = _bn(x, np.ones(2), np.zeros(2))
        assert np.allclose(stats.mean, 0.1 * x.mean(0))
        assert np.allclose(stats.var, 0.9 + 0.1 * x.var(0, ddof=1))
        out, _ = _bn(x, np.ones(2), np.zeros(2), "infer", stats)
        assert np.allclose(out.data, (x - stats.mean) / np.sqrt(stats.var + 1e-5))


def test_bn_small_batch_train_error():
    with pytest.raises(ConfigError):
        _bn(np.ones((1, 3)), np.ones(3), np.zeros(3))


@pytest.mark.parametrize("shape,mode", [((5, 3), "train"), ((3, 2, 4, 4), "train"), ((3, 2, 4, 4), "infer")])
def test_bn_gradcheck(shape, mode):
    rng = np.random.default_rng(12)
    C = shape[1]
    arrays = {"x": rng.normal(size=shape), "g": rng.uniform(0.5, 1.5, C), "b": rng.normal(size=C)}
    w = rng.normal(size=shape)

    def loss(t):
        stats = BatchNormStats(np.full(C, 0.3), np.full(C, 1.7))
        return (fn.batchnorm(t["x"], t["g"], t["b"], stats, mode) * Tensor(w)).sum()

    errs = gradcheck(loss, arrays)
    assert max(errs.values()) < 1e-6, errs


# -- dropout ------------------------------------------------------------------


def test_dropout_identity_cases():
    x = Tensor(np.arange(6.0))
    rng = np.random.default_rng(0)
    assert fn.dropout(x, 0.0, "train", rng) is x
    assert fn.dropout(x, 0.5, "infer", rng) is x


def test_dropout_statistics():
    out = fn.dropout(Tensor(np.ones(100_000)), 0.25, "train", np.random.default_rng(13)).data
    assert abs(np.mean(out > 0) - 0.75) < 0.01
    assert abs(out.mean() - 1.0) < 0.02


def test_dropout_rate_error():
    with pytest.raises(ConfigError):
        fn.dropout(Tensor([1.0]), 1.0, "train", np.random.default_rng(0))


def test_dropout_gradcheck():
    x = np.random.default_rng(14).normal(size=(4, 6))

    def loss(t):
        return (fn.dropout(t["x"], 0.4, "train", np.random.default_rng(99)) ** 2).sum()

    assert gradcheck(loss, {"x": x}, n_points=20)["x"] < 1e-6


# -- mse ----------------------------------------------------------------------


def test_mse_values():
    assert fn.mse_loss(Tensor([1.0, 2.0]), [1.0, 2.0]).item() == 0.0
    assert fn.mse_loss(Tensor([1.0, 2.0]), [0.0, 0.0]).item() == 2.5
    with pytest.raises(DimensionError):
        fn.mse_loss(Tensor([1.0, 2.0]), [0.0])


def test_mse_gradient_formula():
    rng = np.random.default_rng(15)
    p, t = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    with precision(np.float64):
        pred = Tensor(p, requires_grad=True)
        fn.mse_loss(pred, t).backward()
    assert np.allclose(pred.grad, 2 * (p - t) / p.size)
    errs = gradcheck(lambda d: fn.mse_loss(d["p"], t), {"p": p})
    assert errs["p"] < 1e-4
