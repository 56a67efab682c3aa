import numpy as np
import pytest

import octseg.autodiff as ad
import octseg.nn as nn
from octseg.autodiff import Tape, Variable
from octseg.gradcheck import finite_difference_check


def conv_oracle(x, w, b, dilation):
    """Direct-summation convolution, looped per the definition."""
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    pad = dilation * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, cout, h, wd), dtype=x.dtype)
    for ni in range(n):
        for o in range(cout):
            for y in range(h):
                for xx in range(wd):
                    acc = b[o]
                    for c in range(cin):
                        for i in range(k):
                            for j in range(k):
                                acc += w[o, c, i, j] * \
                                    xp[ni, c, y + dilation * i, xx + dilation * j]
                    out[ni, o, y, xx] = acc
    return out


def pool_oracle(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for y in range(h // 2):
                for xx in range(w // 2):
                    out[ni, ci, y, xx] = x[ni, ci, 2 * y:2 * y + 2,
                                           2 * xx:2 * xx + 2].max()
    return out


# ---------------------------------------------------------------- conv2d

def test_conv_identity_kernel_returns_input():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 1, 6, 7))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    out = nn.conv2d(Variable(x), Variable(w), Variable(np.zeros(1)), dilation=1)
    assert np.allclose(out.value, x, atol=1e-12)


def test_conv_all_ones_dilation2_center_is_nine():
    x = np.ones((1, 1, 5, 5))
    w = np.ones((1, 1, 3, 3))
    out = nn.conv2d(Variable(x), Variable(w), Variable(np.zeros(1)), dilation=2)
    assert out.value[0, 0, 2, 2] == pytest.approx(9.0)
    assert np.allclose(out.value, conv_oracle(x, w, np.zeros(1), 2))


def test_conv_dilation_moves_impulse_response():
    x = np.zeros((1, 1, 9, 9))
    x[0, 0, 4, 4] = 1.0
    w = np.ones((1, 1, 3, 3))
    for d in (1, 2):
        out = nn.conv2d(Variable(x), Variable(w), Variable(np.zeros(1)),
                        dilation=d).value[0, 0]
        nz = np.argwhere(out != 0) - 4
        assert set(map(tuple, nz)) == {(i * d, j * d)
                                       for i in (-1, 0, 1) for j in (-1, 0, 1)}
        assert np.allclose(out, conv_oracle(x, w, np.zeros(1), d)[0, 0])


@pytest.mark.parametrize("seed", range(8))
def test_conv_matches_direct_summation_oracle(seed):
    rng = np.random.default_rng(seed)
    n, cin, cout = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
    d = int(rng.choice([1, 2, 4]))
    h = int(rng.integers(2 * d + 1, 13))
    wd = int(rng.integers(2 * d + 1, 13))
    x = rng.normal(size=(n, cin, h, wd))
    w = rng.normal(size=(cout, cin, 3, 3))
    b = rng.normal(size=cout)
    out = nn.conv2d(Variable(x), Variable(w), Variable(b), dilation=d).value
    ref = conv_oracle(x, w, b, d)
    assert np.max(np.abs(out - ref)) <= 1e-5 * max(1.0, np.max(np.abs(ref)))


def test_conv_same_padding_preserves_size_all_dilations():
    x = Variable(np.random.default_rng(1).normal(size=(1, 2, 16, 24)))
    w = Variable(np.random.default_rng(2).normal(size=(3, 2, 3, 3)))
    b = Variable(np.zeros(3))
    for d in (1, 2, 4, 8):
        assert nn.conv2d(x, w, b, dilation=d).value.shape == (1, 3, 16, 24)


def test_conv_rejects_bad_inputs():
    x = Variable(np.zeros((1, 2, 4, 4)))
    w = Variable(np.zeros((3, 5, 3, 3)))
    with pytest.raises(ValueError, match="channel mismatch"):
        nn.conv2d(x, w, Variable(np.zeros(3)))
    w_ok = Variable(np.zeros((3, 2, 3, 3)))
    with pytest.raises(ValueError, match="dilation"):
        nn.conv2d(x, w_ok, Variable(np.zeros(3)), dilation=0)


# ---------------------------------------------------------------- conv1x1

def test_conv1x1_identity_weights():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 4, 5, 6))
    w = np.eye(4)[:, :, None, None]
    out = nn.conv1x1(Variable(x), Variable(w), Variable(np.zeros(4)))
    assert np.allclose(out.value, x, atol=1e-12)


def test_conv1x1_zero_weights_bias_only():
    x = Variable(np.random.default_rng(4).normal(size=(2, 3, 4, 4)))
    b = np.array([1.0, -2.0])
    out = nn.conv1x1(x, Variable(np.zeros((2, 3, 1, 1))), Variable(b))
    assert np.allclose(out.value, b[None, :, None, None] * np.ones((2, 2, 4, 4)))


def test_conv1x1_equals_per_pixel_matvec():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 4, 5))
    w = rng.normal(size=(4, 3, 1, 1))
    b = rng.normal(size=4)
    out = nn.conv1x1(Variable(x), Variable(w), Variable(b)).value
    for n in range(2):
        for y in range(4):
            for xx in range(5):
                ref = w[:, :, 0, 0] @ x[n, :, y, xx] + b
                assert np.allclose(out[n, :, y, xx], ref, atol=1e-10)


def test_conv1x1_rejects_wide_kernels():
    with pytest.raises(ValueError):
        nn.conv1x1(Variable(np.zeros((1, 1, 4, 4))),
                   Variable(np.zeros((1, 1, 3, 3))), Variable(np.zeros(1)))


# ---------------------------------------------------------------- batch norm

def test_batch_norm_train_normalizes_batch():
    rng = np.random.default_rng(6)
    x = rng.normal(loc=3.0, scale=2.5, size=(4, 3, 8, 8))
    out = nn.batch_norm(Variable(x), Variable(np.ones(3)),
                        Variable(np.zeros(3)), np.zeros(3), np.ones(3),
                        training=True).value
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_batch_norm_constant_channel_maps_to_beta():
    x = np.full((2, 1, 4, 4), 7.0)
    beta = np.array([0.25])
    out = nn.batch_norm(Variable(x), Variable(np.ones(1)), Variable(beta),
                        np.zeros(1), np.ones(1), training=True).value
    assert np.allclose(out, 0.25, atol=1e-6)


def test_batch_norm_infer_is_fixed_affine_map():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 2, 3, 3))
    gamma, beta = np.array([1.5, 0.5]), np.array([-1.0, 2.0])
    rm, rv = np.array([0.3, -0.2]), np.array([1.7, 0.9])
    eps = 1e-5
    out = nn.batch_norm(Variable(x), Variable(gamma), Variable(beta),
                        rm.copy(), rv.copy(), eps=eps, training=False).value
    ref = (x - rm[None, :, None, None]) / np.sqrt(rv + eps)[None, :, None, None]
    ref = ref * gamma[None, :, None, None] + beta[None, :, None, None]
    assert np.allclose(out, ref, atol=1e-12)


def test_batch_norm_running_stats_update():
    rng = np.random.default_rng(8)
    x = rng.normal(loc=2.0, size=(2, 1, 8, 8))
    rm, rv = np.zeros(1), np.ones(1)
    nn.batch_norm(Variable(x), Variable(np.ones(1)), Variable(np.zeros(1)),
                  rm, rv, momentum=0.9, training=True)
    assert rm[0] == pytest.approx(0.1 * x.mean(), rel=1e-6)
    assert rv[0] == pytest.approx(0.9 + 0.1 * x.var(), rel=1e-6)
    # inference must not touch them
    rm_before, rv_before = rm.copy(), rv.copy()
    nn.batch_norm(Variable(x), Variable(np.ones(1)), Variable(np.zeros(1)),
                  rm, rv, training=False)
    assert np.array_equal(rm, rm_before) and np.array_equal(rv, rv_before)


def test_batch_norm_rejects_empty_batch():
    with pytest.raises(ValueError):
        nn.batch_norm(Variable(np.zeros((0, 2, 4, 4))), Variable(np.ones(2)),
                      Variable(np.zeros(2)), np.zeros(2), np.ones(2),
                      training=True)


# ---------------------------------------------------------------- elu

def test_elu_values():
    out = nn.elu(Variable(np.array([0.0, 2.0, -1.0])))
    assert out.value[0] == 0.0
    assert out.value[1] == 2.0
    assert out.value[2] == pytest.approx(np.expm1(-1.0), abs=1e-12)


# ---------------------------------------------------------------- pooling

def test_maxpool_basic_and_tie_rule():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    out, idx = nn.maxpool2x2(Variable(x))
    assert out.value.reshape(()) == 4.0

    const = Variable(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
    with Tape() as tape:
        pooled, idx = nn.maxpool2x2(const)
        loss = ad.reduce_sum(pooled)
    assert pooled.value.reshape(()) == 5.0
    assert idx.reshape(()) == 0  # first element in row-major window order
    tape.backward(loss)
    assert np.array_equal(const.grad.reshape(2, 2), [[1, 0], [0, 0]])


@pytest.mark.parametrize("seed", range(5))
def test_maxpool_matches_bruteforce(seed):
    x = np.random.default_rng(seed).normal(size=(2, 3, 8, 8))
    out, _ = nn.maxpool2x2(Variable(x))
    assert np.array_equal(out.value, pool_oracle(x))


def test_maxpool_rejects_odd_dims():
    with pytest.raises(ValueError):
        nn.maxpool2x2(Variable(np.zeros((1, 1, 5, 4))))


# ---------------------------------------------------------------- upsample

def test_upsample_replicates_blocks():
    out = nn.upsample2x2(Variable(np.array([[5.0]]).reshape(1, 1, 1, 1)))
    assert np.array_equal(out.value.reshape(2, 2), np.full((2, 2), 5.0))


def test_upsample_of_pooled_constant_is_identity():
    x = Variable(np.full((1, 2, 4, 6), 3.25))
    pooled, _ = nn.maxpool2x2(x)
    restored = nn.upsample2x2(pooled)
    assert np.array_equal(restored.value, x.value)
    assert restored.value.shape == x.value.shape


def test_upsample_sum_gradient_is_four():
    x = Variable(np.random.default_rng(9).normal(size=(1, 1, 3, 3)),
                 requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(nn.upsample2x2(x))
    tape.backward(loss)
    assert np.array_equal(x.grad, 4 * np.ones((1, 1, 3, 3)))
    rep = finite_difference_check(
        lambda v: ad.reduce_sum(nn.upsample2x2(v)),
        np.random.default_rng(10).normal(size=(1, 1, 3, 3)), h=1e-6, tol=1e-8)
    assert rep.passed


# ---------------------------------------------------------------- concat

def test_concat_preserves_planes():
    a = np.random.default_rng(11).normal(size=(1, 1, 3, 3))
    b = np.random.default_rng(12).normal(size=(1, 1, 3, 3))
    out = nn.concat_channels(Variable(a), Variable(b)).value
    assert out.shape == (1, 2, 3, 3)
    assert np.array_equal(out[:, :1], a)
    assert np.array_equal(out[:, 1:], b)


def test_concat_with_zeros_then_selecting_first_half_is_identity():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(1, 2, 4, 4))
    cat = nn.concat_channels(Variable(x), Variable(np.zeros((1, 2, 4, 4))))
    w = np.zeros((2, 4, 1, 1))
    w[0, 0], w[1, 1] = 1.0, 1.0
    out = nn.conv1x1(cat, Variable(w), Variable(np.zeros(2)))
    assert np.allclose(out.value, x, atol=1e-12)


def test_concat_backward_splits_gradient():
    rng = np.random.default_rng(14)
    a_val = rng.normal(size=(1, 2, 3, 3))
    b_val = rng.normal(size=(1, 1, 3, 3))
    r = rng.normal(size=(1, 3, 3, 3))

    rep_a = finite_difference_check(
        lambda v: ad.reduce_sum(ad.mul(
            nn.concat_channels(v, Variable(b_val)), r)), a_val)
    rep_b = finite_difference_check(
        lambda v: ad.reduce_sum(ad.mul(
            nn.concat_channels(Variable(a_val), v), r)), b_val)
    assert rep_a.passed and rep_b.passed


def test_concat_rejects_spatial_mismatch():
    with pytest.raises(ValueError):
        nn.concat_channels(Variable(np.zeros((1, 1, 4, 4))),
                           Variable(np.zeros((1, 1, 4, 5))))


# ---------------------------------------------------------------- softmax

def test_softmax_uniform_for_zero_logits():
    out = nn.softmax_channels(Variable(np.zeros((1, 8, 2, 2)))).value
    assert np.allclose(out, 0.125, atol=1e-12)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(15)
    x = rng.normal(size=(1, 4, 3, 3))
    a = nn.softmax_channels(Variable(x)).value
    b = nn.softmax_channels(Variable(x + 17.5)).value
    assert np.allclose(a, b, atol=1e-12)


def test_softmax_reference_values():
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1)
    out = nn.softmax_channels(Variable(x)).value.reshape(3)
    # scalar evaluation of exp(z)/sum(exp(z))
    assert out == pytest.approx([0.09003057, 0.24472847, 0.66524096], abs=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_softmax_outputs_are_probabilities(seed):
    x = np.random.default_rng(seed).normal(scale=8.0, size=(2, 8, 4, 4))
    out = nn.softmax_channels(Variable(x)).value
    assert np.all(out > 0) and np.all(out < 1)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)


# ------------------------------------------------- layer parameter classes

def test_conv_layer_init_scale():
    rng = np.random.default_rng(16)
    layer = nn.Conv2d(16, 16, 3, 1, rng)
    assert layer.w.value.shape == (16, 16, 3, 3)
    observed = layer.w.value.std()
    assert observed == pytest.approx(np.sqrt(2.0 / (16 * 9)), rel=0.15)
    assert np.array_equal(layer.b.value, np.zeros(16))


def test_batchnorm_layer_roundtrip_buffers():
    layer = nn.BatchNorm2d(4)
    assert np.array_equal(layer.gamma.value, np.ones(4))
    assert np.array_equal(layer.running_var, np.ones(4))
    assert set(layer.parameters()) == {"gamma", "beta"}
    assert set(layer.buffers()) == {"running_mean", "running_var"}
