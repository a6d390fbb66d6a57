import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from letnet import ops
from letnet.errors import ConfigError
from letnet.tensor import Tensor, mac_trace
from oracles import (
    channel_pool_loop, conv2d_loop, global_pool_loop, pool2d_loop, resize_loop, shuffle_loop, softmax_loop,
)

ORACLE_CASES = 100


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


@st.composite
def conv_cases(draw):
    groups = draw(st.sampled_from([1, 2, 3]))
    cin = groups * draw(st.integers(1, 2))
    cout = groups * draw(st.integers(1, 2))
    kh, kw = draw(st.integers(1, 3)), draw(st.integers(1, 3))
    sh, sw = draw(st.integers(1, 2)), draw(st.integers(1, 2))
    dh, dw = draw(st.integers(1, 2)), draw(st.integers(1, 2))
    ph, pw = draw(st.integers(0, 2)), draw(st.integers(0, 2))
    h = draw(st.integers(max(1, dh * (kh - 1) + 1 - 2 * ph), 6))
    w = draw(st.integers(max(1, dw * (kw - 1) + 1 - 2 * pw), 6))
    n = draw(st.integers(1, 2))
    seed = draw(st.integers(0, 2**31))
    bias = draw(st.booleans())
    return dict(n=n, cin=cin, cout=cout, k=(kh, kw), s=(sh, sw), d=(dh, dw), p=(ph, pw), hw=(h, w),
                groups=groups, seed=seed, bias=bias)


@settings(max_examples=ORACLE_CASES)
@given(conv_cases())
def test_conv2d_matches_loop_oracle(case):
    rng = np.random.default_rng(case["seed"])
    x = rng.standard_normal((case["n"], case["cin"], *case["hw"]))
    w = rng.standard_normal((case["cout"], case["cin"] // case["groups"], *case["k"]))
    b = rng.standard_normal(case["cout"]) if case["bias"] else None
    got = ops.conv2d(t64(x), t64(w), None if b is None else t64(b),
                     stride=case["s"], padding=case["p"], dilation=case["d"], groups=case["groups"]).data
    want = conv2d_loop(x, w, b, case["s"], case["p"], case["d"], case["groups"])
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6)


@settings(max_examples=ORACLE_CASES)
@given(st.integers(0, 2**31), st.sampled_from(["avg", "max"]), st.integers(1, 3), st.integers(1, 3))
def test_pool2d_matches_loop_oracle(seed, kind, k, s):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(k, 7)),
                             int(rng.integers(k, 7))))
    np.testing.assert_allclose(ops.pool2d(t64(x), kind, k, s).data, pool2d_loop(x, kind, k, s), atol=1e-12)


@settings(max_examples=ORACLE_CASES)
@given(st.integers(0, 2**31), st.sampled_from(["avg", "max"]))
def test_global_and_channel_pools_match_oracle(seed, kind):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(1, 6))))
    np.testing.assert_allclose(ops.pool(t64(x), kind, "global").data, global_pool_loop(x, kind), atol=1e-12)
    np.testing.assert_allclose(ops.pool(t64(x), kind, "channel").data, channel_pool_loop(x, kind), atol=1e-12)


@settings(max_examples=ORACLE_CASES)
@given(st.integers(0, 2**31), st.integers(0, 3))
def test_softmax_matches_loop_oracle(seed, axis):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 5)) * 20
    got = ops.softmax(t64(x), axis=axis).data
    np.testing.assert_allclose(got, softmax_loop(x, axis), atol=1e-12)
    np.testing.assert_allclose(got.sum(axis=axis), 1.0, atol=1e-12)


@settings(max_examples=ORACLE_CASES)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_channel_shuffle_matches_index_oracle(groups, per, seed):
    x = np.random.default_rng(seed).standard_normal((2, groups * per, 3, 2))
    np.testing.assert_array_equal(ops.channel_shuffle(t64(x), groups).data, shuffle_loop(x, groups))


@settings(max_examples=ORACLE_CASES)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 13), st.integers(1, 13), st.integers(0, 2**31))
def test_resize_matches_pixel_oracle(h, w, oh, ow, seed):
    x = np.random.default_rng(seed).standard_normal((1, 2, h, w))
    np.testing.assert_allclose(ops.resize_bilinear(t64(x), oh, ow).data, resize_loop(x, oh, ow), atol=1e-12)


def test_resize_identity_and_constant():
    x = np.random.default_rng(0).standard_normal((1, 2, 4, 5))
    np.testing.assert_allclose(ops.resize_bilinear(t64(x), 4, 5).data, x, atol=1e-15)
    const = np.full((1, 1, 3, 3), 2.5)
    np.testing.assert_allclose(ops.resize_bilinear(t64(const), 7, 11).data, 2.5)


def test_bilinear_rows_are_convex_weights():
    for n_in, n_out in [(4, 8), (8, 4), (3, 7), (1, 5)]:
        m = ops.bilinear_matrix(n_in, n_out, np.float64)
        np.testing.assert_allclose(m.sum(axis=1), 1.0)
        assert (m >= 0).all()


def test_conv_mac_examples():
    # 3x3, 16->16, 32x32 output, groups 1
    spec = ops.ConvSpec(16, 16, 3, padding=1)
    assert spec.macs(32, 32) == 32 * 32 * 16 * 9 * 16 == 2_359_296
    x = Tensor(np.zeros((1, 16, 32, 32), dtype=np.float32))
    with mac_trace() as trace:
        ops.conv2d(x, Tensor(np.zeros(spec.weight_shape, dtype=np.float32)), padding=1)
    assert trace == [("conv2d", 2_359_296)]


def test_param_count_examples():
    assert ops.ConvSpec(64, 32, bias=True).param_count() == 2080
    assert ops.ConvSpec(32, 32, (3, 1), groups=32).param_count() == 96


def test_global_avg_pool_mac_convention():
    with mac_trace() as trace:
        ops.global_avg_pool(Tensor(np.zeros((1, 8, 5, 6))))
    assert trace == [("pool", 8 * 5 * 6)]


@pytest.mark.parametrize(
    "kwargs",
    [dict(in_channels=3, out_channels=4, groups=2), dict(in_channels=4, out_channels=4, kernel=0),
     dict(in_channels=4, out_channels=4, padding=-1), dict(in_channels=2, out_channels=2, groups=0)],
)
def test_conv_spec_rejects_bad_geometry(kwargs):
    with pytest.raises(ConfigError):
        ops.ConvSpec(**kwargs)


def test_conv_rejects_empty_output():
    with pytest.raises(ConfigError, match="empty output"):
        ops.ConvSpec(1, 1, 5).output_size(3, 3)


def test_pool_errors():
    x = t64(np.zeros((1, 2, 3, 3)))
    with pytest.raises(ConfigError):
        ops.pool2d(x, "avg", 4)
    with pytest.raises(ConfigError):
        ops.pool(x, "median")
    with pytest.raises(ConfigError):
        ops.channel_shuffle(x, 3)


def test_batch_norm_training_updates_running_stats(rng):
    x = rng.standard_normal((4, 3, 5, 5)) * 2 + 1
    rm, rv = np.zeros(3), np.ones(3)
    out = ops.batch_norm(t64(x), t64(np.ones(3)), t64(np.zeros(3)), rm, rv, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), x.var(axis=(0, 2, 3)) / (x.var(axis=(0, 2, 3)) + 1e-5))
    count = 4 * 5 * 5
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * count / (count - 1))


def test_batch_norm_eval_uses_running_stats():
    x = np.ones((1, 2, 2, 2))
    out = ops.batch_norm(t64(x), t64([2.0, 1.0]), t64([0.0, 1.0]), np.array([1.0, 0.0]), np.array([4.0, 1.0]),
                         training=False).data
    np.testing.assert_allclose(out[0, 0], 0.0)
    np.testing.assert_allclose(out[0, 1], 1 / np.sqrt(1 + 1e-5) + 1)


def test_sigmoid_is_stable_at_extremes():
    y = ops.sigmoid(t64([-1000.0, 0.0, 1000.0])).data
    np.testing.assert_array_equal(y, [0.0, 0.5, 1.0])
    assert np.isfinite(ops.softmax(t64([[1e4, -1e4, 0.0]])).data).all()


mpmath.mp.dps = 50


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=6))
def test_sigmoid_softmax_against_high_precision(values):
    got_sig = ops.sigmoid(t64(values)).data
    got_soft = ops.softmax(t64(values)).data
    want_sig = [float(1 / (1 + mpmath.exp(-mpmath.mpf(v)))) for v in values]
    exps = [mpmath.exp(mpmath.mpf(v)) for v in values]
    total = mpmath.fsum(exps)
    want_soft = [float(e / total) for e in exps]
    np.testing.assert_allclose(got_sig, want_sig, rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(got_soft, want_soft, rtol=1e-12, atol=1e-300)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8))
def test_layer_norm_against_high_precision(values):
    got = ops.layer_norm(t64([values]), t64(np.ones(len(values))), t64(np.zeros(len(values)))).data[0]
    vs = [mpmath.mpf(v) for v in values]
    mean = mpmath.fsum(vs) / len(vs)
    var = mpmath.fsum((v - mean) ** 2 for v in vs) / len(vs)
    want = [float((v - mean) / mpmath.sqrt(var + mpmath.mpf("1e-5"))) for v in vs]
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)


def test_linear_matches_matmul(rng):
    x, w, b = rng.standard_normal((3, 4, 5)), rng.standard_normal((2, 5)), rng.standard_normal(2)
    with mac_trace() as trace:
        y = ops.linear(t64(x), t64(w), t64(b)).data
    np.testing.assert_allclose(y, x @ w.T + b)
    assert trace == [("linear", 3 * 4 * 2 * 5)]
