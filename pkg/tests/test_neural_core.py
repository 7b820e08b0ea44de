"""Neural core: layer forwards vs scalar oracles, gradients vs finite differences."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from termex.autodiff import (
    ParamStore,
    Tensor,
    masked_softmax,
    mul,
    scale,
    softmax_cross_entropy,
    tsum,
)
from termex.nn import ffn, linear, multi_head_attention
from termex.autodiff import layer_norm
from termex.optim import AdamState, adam_step, grad_check

import oracles


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def param(store, name, a):
    return store.add(name, np.asarray(a, dtype=np.float64))


# ---------------------------------------------------------------------------
# linear


def test_linear_identity_weight():
    y = linear(t64([[1.0, 2.0]]), t64([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(y.data, [[1.0, 2.0]])


def test_linear_with_bias():
    y = linear(t64([[1.0, 2.0]]), t64([[3.0], [4.0]]), t64([5.0]))
    assert np.allclose(y.data, [[16.0]])


def test_linear_random_vs_loop_oracle():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
    y = linear(t64(x), t64(w), t64(b))
    expected = oracles.linear_loops(x, w, b)
    assert np.allclose(y.data, expected, atol=1e-12)


def test_linear_shape_mismatch_mentions_both_shapes():
    with pytest.raises(ValueError) as err:
        linear(t64(np.zeros((2, 3))), t64(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_linear_dtype_mismatch_rejected():
    x = Tensor(np.zeros((2, 3), dtype=np.float32))
    w = Tensor(np.zeros((3, 2), dtype=np.float64))
    with pytest.raises(ValueError, match="dtype"):
        linear(x, w)


# ---------------------------------------------------------------------------
# multi-head attention


def _attn_weights(rng, d, heads=None):
    return tuple(t64(rng.normal(size=(d, d)) * 0.5) for _ in range(4))


def test_attention_identical_values_rows_equal():
    rng = np.random.default_rng(1)
    d = 8
    wq, wk, wv, wo = _attn_weights(rng, d)
    v = rng.normal(size=d)
    k_in = t64(np.tile(v, (5, 1)))
    q_in = t64(rng.normal(size=(3, d)))
    y = multi_head_attention(q_in, k_in, k_in, None, 2, wq, wk, wv, wo)
    assert np.allclose(y.data, y.data[0], atol=1e-10)
    expected = oracles.attention_loops(q_in.data, k_in.data, k_in.data, None, 2,
                                       wq.data, wk.data, wv.data, wo.data)
    assert np.allclose(y.data, expected, atol=1e-10)


def test_attention_single_head_vs_loop_oracle():
    rng = np.random.default_rng(2)
    d = 4
    wq, wk, wv, wo = _attn_weights(rng, d)
    q_in = t64(rng.normal(size=(2, d)))
    k_in = t64(rng.normal(size=(2, d)))
    v_in = t64(rng.normal(size=(2, d)))
    y = multi_head_attention(q_in, k_in, v_in, None, 1, wq, wk, wv, wo)
    expected = oracles.attention_loops(q_in.data, k_in.data, v_in.data, None, 1,
                                       wq.data, wk.data, wv.data, wo.data)
    assert np.allclose(y.data, expected, atol=1e-10)


@pytest.mark.parametrize("m,n", [(2, 3), (5, 1), (1, 7)])
def test_attention_output_shape_follows_queries(m, n):
    rng = np.random.default_rng(3)
    d = 8
    wq, wk, wv, wo = _attn_weights(rng, d)
    q_in = t64(rng.normal(size=(n + 2, d)))
    kv = t64(rng.normal(size=(m + 2, d)))
    y = multi_head_attention(q_in, kv, kv, None, 4, wq, wk, wv, wo)
    assert y.data.shape == (n + 2, d)


def test_attention_all_keys_masked_is_an_error():
    rng = np.random.default_rng(4)
    d = 4
    wq, wk, wv, wo = _attn_weights(rng, d)
    x = t64(rng.normal(size=(2, d)))
    with pytest.raises(ValueError, match="empty attention context"):
        multi_head_attention(x, x, x, np.array([True, True]), 1, wq, wk, wv, wo)


def test_attention_mask_zeroes_weights_and_rows_normalize():
    rng = np.random.default_rng(5)
    d = 8
    wq, wk, wv, wo = _attn_weights(rng, d)
    q_in = t64(rng.normal(size=(3, d)))
    kv = t64(rng.normal(size=(4, d)))
    mask = np.array([False, True, False, True])
    capture = []
    multi_head_attention(q_in, kv, kv, mask, 2, wq, wk, wv, wo, capture=capture)
    weights = capture[0]
    assert weights.shape == (2, 3, 4)
    assert (weights[:, :, mask] < 1e-12).all()
    assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_heads_must_divide_dim():
    rng = np.random.default_rng(6)
    wq, wk, wv, wo = _attn_weights(rng, 6)
    x = t64(rng.normal(size=(2, 6)))
    with pytest.raises(ValueError, match="divisible"):
        multi_head_attention(x, x, x, None, 4, wq, wk, wv, wo)


# ---------------------------------------------------------------------------
# layer norm


def test_layer_norm_constant_row_maps_to_beta():
    y = layer_norm(t64([[1.0, 1.0, 1.0]]), t64([1.0, 1.0, 1.0]), t64([0.0, 0.0, 0.0]))
    assert np.allclose(y.data, 0.0, atol=1e-12)


def test_layer_norm_two_point_standardization():
    y = layer_norm(t64([[1.0, 3.0]]), t64([1.0, 1.0]), t64([0.0, 0.0]), eps=1e-12)
    assert np.allclose(y.data, [[-1.0, 1.0]], atol=1e-5)


def test_layer_norm_random_vs_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 8)) * 3.0
    gamma, beta = np.ones(8), np.zeros(8)
    y = layer_norm(t64(x), t64(gamma), t64(beta))
    assert np.allclose(y.data.mean(axis=1), 0.0, atol=1e-6)
    assert np.allclose(y.data.var(axis=1), 1.0, atol=1e-4)
    expected = oracles.layer_norm_loops(x, gamma, beta)
    assert np.allclose(y.data, expected, atol=1e-10)


def test_layer_norm_requires_positive_eps():
    with pytest.raises(ValueError):
        layer_norm(t64([[1.0, 2.0]]), t64([1.0, 1.0]), t64([0.0, 0.0]), eps=0.0)


# ---------------------------------------------------------------------------
# ffn


def test_ffn_zero_input_zero_biases_gives_zero():
    z = np.zeros
    y = ffn(t64(z((3, 4))), t64(np.ones((4, 6))), t64(z(6)), t64(np.ones((6, 4))), t64(z(4)))
    assert np.allclose(y.data, 0.0)


def test_ffn_hand_case_vs_loop_oracle():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 2))
    w1, b1 = rng.normal(size=(2, 3)), rng.normal(size=3)
    w2, b2 = rng.normal(size=(3, 2)), rng.normal(size=2)
    y = ffn(t64(x), t64(w1), t64(b1), t64(w2), t64(b2))
    expected = oracles.ffn_loops(x, w1, b1, w2, b2)
    assert np.allclose(y.data, expected, atol=1e-10)


def test_ffn_accepts_paper_scale_shapes():
    rng = np.random.default_rng(9)
    d, d_ff = 1024, 4096
    x = Tensor(rng.normal(size=(2, d)).astype(np.float32))
    w1 = Tensor(rng.normal(size=(d, d_ff)).astype(np.float32) * 0.02)
    b1 = Tensor(np.zeros(d_ff, dtype=np.float32))
    w2 = Tensor(rng.normal(size=(d_ff, d)).astype(np.float32) * 0.02)
    b2 = Tensor(np.zeros(d, dtype=np.float32))
    assert ffn(x, w1, b1, w2, b2).data.shape == (2, d)


# ---------------------------------------------------------------------------
# softmax cross entropy


def test_cross_entropy_peaked_logits_loss_near_zero():
    logits = t64([[100.0, 0.0], [0.0, 100.0]])
    loss = softmax_cross_entropy(logits, [0, 1])
    assert loss.data < 1e-10


def test_cross_entropy_uniform_binary_is_ln2():
    for target in (0, 1):
        loss = softmax_cross_entropy(t64([[0.0, 0.0]]), [target])
        assert math.isclose(float(loss.data), math.log(2.0), rel_tol=1e-12)


def test_cross_entropy_random_vs_loop_oracle():
    rng = np.random.default_rng(10)
    logits = rng.normal(size=(3, 5)) * 2.0
    targets = [1, 4, 0]
    loss = softmax_cross_entropy(t64(logits), targets)
    assert math.isclose(float(loss.data),
                        oracles.cross_entropy_loops(logits, targets), abs_tol=1e-6)


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        softmax_cross_entropy(t64([[0.0, 0.0]]), [2])


@given(st.integers(2, 12), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_cross_entropy_uniform_logits_equal_ln_c(c, n):
    loss = softmax_cross_entropy(t64(np.zeros((n, c))), [0] * n)
    assert math.isclose(float(loss.data), math.log(c), rel_tol=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_cross_entropy_nonnegative(seed):
    rng = np.random.default_rng(seed)
    n, c = int(rng.integers(1, 5)), int(rng.integers(2, 7))
    logits = rng.normal(size=(n, c)) * 5.0
    targets = rng.integers(0, c, size=n)
    assert float(softmax_cross_entropy(t64(logits), targets).data) >= 0.0


# ---------------------------------------------------------------------------
# determinism


def test_forward_passes_bit_identical():
    rng = np.random.default_rng(11)
    d = 8
    wq, wk, wv, wo = _attn_weights(rng, d)
    x = t64(rng.normal(size=(4, d)))
    y1 = multi_head_attention(x, x, x, None, 2, wq, wk, wv, wo)
    y2 = multi_head_attention(x, x, x, None, 2, wq, wk, wv, wo)
    assert np.array_equal(y1.data, y2.data)


# ---------------------------------------------------------------------------
# gradients vs central differences (the dual route)


@pytest.mark.parametrize("seed", range(10))
def test_linear_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    store = ParamStore()
    x = param(store, "x", rng.normal(size=(3, 4)))
    w = param(store, "w", rng.normal(size=(4, 2)))
    b = param(store, "b", rng.normal(size=2))
    probe = Tensor(np.random.default_rng(seed).normal(size=(3, 2)))

    def loss_fn(s):
        return tsum(mul(linear(x, w, b), probe))

    assert grad_check(loss_fn, store, h=1e-5) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_attention_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(200 + seed)
    d, heads = 8, 2
    store = ParamStore()
    q = param(store, "q", rng.normal(size=(3, d)))
    kv = param(store, "kv", rng.normal(size=(4, d)))
    ws = [param(store, n, rng.normal(size=(d, d)) * 0.5) for n in ("wq", "wk", "wv", "wo")]
    mask = np.array([False, False, True, False])
    probe = Tensor(np.random.default_rng(seed).normal(size=(3, d)))

    def loss_fn(s):
        out = multi_head_attention(q, kv, kv, mask, heads, *ws)
        return tsum(mul(out, probe))

    assert grad_check(loss_fn, store, h=1e-5) < 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_layer_norm_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(300 + seed)
    store = ParamStore()
    x = param(store, "x", rng.normal(size=(3, 6)) * 2.0)
    g = param(store, "g", rng.normal(size=6))
    b = param(store, "b", rng.normal(size=6))
    probe = Tensor(np.random.default_rng(seed).normal(size=(3, 6)))

    def loss_fn(s):
        return tsum(mul(layer_norm(x, g, b), probe))

    assert grad_check(loss_fn, store, h=1e-5) < 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_ffn_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(400 + seed)
    store = ParamStore()
    x = param(store, "x", rng.normal(size=(2, 3)))
    w1 = param(store, "w1", rng.normal(size=(3, 5)))
    b1 = param(store, "b1", rng.normal(size=5))
    w2 = param(store, "w2", rng.normal(size=(5, 3)))
    b2 = param(store, "b2", rng.normal(size=3))
    probe = Tensor(np.random.default_rng(seed).normal(size=(2, 3)))

    def loss_fn(s):
        return tsum(mul(ffn(x, w1, b1, w2, b2), probe))

    assert grad_check(loss_fn, store, h=1e-5) < 1e-3


@pytest.mark.parametrize("seed", range(10))
def test_cross_entropy_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(500 + seed)
    store = ParamStore()
    logits = param(store, "logits", rng.normal(size=(4, 3)))
    targets = rng.integers(0, 3, size=4)

    def loss_fn(s):
        return softmax_cross_entropy(logits, targets)

    assert grad_check(loss_fn, store, h=1e-5) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_masked_softmax_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(600 + seed)
    store = ParamStore()
    x = param(store, "x", rng.normal(size=(3, 5)))
    mask = np.zeros((3, 5))
    mask[:, 2] = -1e9
    probe = Tensor(np.random.default_rng(seed).normal(size=(3, 5)))

    def loss_fn(s):
        return tsum(mul(masked_softmax(x, mask), probe))

    assert grad_check(loss_fn, store, h=1e-5) < 1e-3


def test_dropout_backward_reuses_forward_mask():
    from termex.autodiff import dropout

    x = Tensor(np.ones((4, 6)), requires_grad=True)
    y = dropout(x, 0.5, np.random.default_rng(0))
    keep = y.data  # scaled mask times ones
    y.backward(np.ones_like(y.data))
    assert np.array_equal(x.grad, keep)
    assert set(np.unique(keep)) <= {0.0, 2.0}


def test_dropout_rate_zero_is_identity():
    from termex.autodiff import dropout

    x = Tensor(np.ones((2, 3)))
    assert dropout(x, 0.0, np.random.default_rng(0)) is x


def test_embedding_gradients_scatter_add():
    from termex.autodiff import embedding

    table = Tensor(np.arange(12, dtype=np.float64).reshape(4, 3),
                   requires_grad=True)
    y = embedding(table, np.array([1, 1, 3]))
    y.backward(np.ones_like(y.data))
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    assert np.array_equal(table.grad, expected)


# ---------------------------------------------------------------------------
# adam


def _single_param_store(value):
    store = ParamStore()
    w = store.add("w", np.asarray(value, dtype=np.float64))
    return store, w


@given(st.integers(1, 5000))
@settings(max_examples=25, deadline=None)
def test_adam_zero_gradients_identity_any_t(t):
    store, w = _single_param_store([1.5, -2.0])
    state = AdamState(base_lr=1e-3, warmup_steps=10)
    state.t = t - 1
    before = w.data.copy()
    adam_step(store, state)
    assert np.array_equal(w.data, before)
    assert state.t == t


def test_adam_single_step_matches_hand_computation():
    store, w = _single_param_store([1.0])
    w.ensure_grad()[:] = 1.0
    state = AdamState(base_lr=1e-3, warmup_steps=1)
    adam_step(store, state)
    # hand-derived bias-corrected update in float64
    m = 0.1 * 1.0
    v = 0.001 * 1.0
    mhat = m / (1.0 - 0.9)
    vhat = v / (1.0 - 0.999)
    expected = 1.0 - 1e-3 * mhat / (math.sqrt(vhat) + 1e-8)
    assert math.isclose(float(w.data[0]), expected, rel_tol=1e-12)
    assert np.array_equal(store._params["w"].grad, np.zeros(1))


def test_adam_defaults_match_training_configuration():
    state = AdamState()
    assert state.base_lr == 1e-4
    assert state.warmup_steps == 4000


def test_adam_lr_schedule_warmup_then_inverse_sqrt():
    state = AdamState(base_lr=1e-4, warmup_steps=4000)
    assert math.isclose(state.lr_at(2000), 0.5e-4)
    assert math.isclose(state.lr_at(4000), 1e-4)
    assert math.isclose(state.lr_at(16000), 1e-4 * math.sqrt(4000 / 16000))


def test_adam_nonfinite_gradient_names_parameter():
    store, w = _single_param_store([1.0])
    w.ensure_grad()[:] = np.nan
    with pytest.raises(FloatingPointError, match="non-finite gradient at w"):
        adam_step(store, AdamState())


def test_adam_step_counter_strictly_increases():
    store, w = _single_param_store([1.0])
    state = AdamState(base_lr=1e-3, warmup_steps=5)
    for expected_t in (1, 2, 3):
        w.ensure_grad()[:] = 0.5
        adam_step(store, state)
        assert state.t == expected_t


# ---------------------------------------------------------------------------
# grad_check itself


def test_grad_check_quadratic_is_nearly_exact():
    store, w = _single_param_store([3.0])

    def loss_fn(s):
        return tsum(scale(mul(w, w), 0.5))

    assert grad_check(loss_fn, store, h=1e-4) < 1e-10


def test_grad_check_rejects_non_finite_loss():
    store, w = _single_param_store([np.inf])

    def loss_fn(s):
        return tsum(w)

    with pytest.raises(FloatingPointError):
        grad_check(loss_fn, store)
