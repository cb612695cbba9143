"""Engine semantics: recording, backward sweep, and per-op rules.

Numeric agreement of every backward rule with finite differences is
covered wholesale in test_gradcheck; here each op's forward is pinned to
a numpy oracle and the graph mechanics are exercised directly.
"""

import numpy as np
import pytest

from fourierkd import tensor as T
from fourierkd.tensor import Tensor


def test_tensor_wraps_float64():
    t = Tensor([1, 2, 3])
    assert t.data.dtype == np.float64
    assert t.shape == (3,)
    assert not t.requires_grad


def test_scalar_item():
    assert Tensor(2.5).item() == 2.5


def test_arithmetic_forward_matches_numpy():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4)) + 3.0   # away from 0 for division
        ta, tb = Tensor(a), Tensor(b)
        np.testing.assert_allclose((ta + tb).data, a + b)
        np.testing.assert_allclose((ta - tb).data, a - b)
        np.testing.assert_allclose((ta * tb).data, a * b)
        np.testing.assert_allclose((ta / tb).data, a / b)
        np.testing.assert_allclose((-ta).data, -a)
        np.testing.assert_allclose((ta ** 2.0).data, a ** 2.0)


def test_scalar_operand_promotion():
    t = Tensor([1.0, 2.0])
    np.testing.assert_allclose((t + 1).data, [2.0, 3.0])
    np.testing.assert_allclose((1 - t).data, [0.0, -1.0])
    np.testing.assert_allclose((2 * t).data, [2.0, 4.0])
    np.testing.assert_allclose((2 / t).data, [2.0, 1.0])


def test_backward_requires_scalar():
    t = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        (t * t).backward()


def test_simple_chain_gradient():
    # d/dx sum(x*x) = 2x, both uses of the same tensor accumulate
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])


def test_broadcast_backward_reduces():
    x = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    (x + b).sum().backward()
    np.testing.assert_allclose(x.grad, np.ones((3, 4)))
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))   # summed over rows


def test_no_grad_suppresses_recording():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert y._backward is None and y._parents == ()
    y2 = x * 2.0
    assert y2._backward is not None


def test_no_grad_restores_on_exception():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(RuntimeError):
        with T.no_grad():
            raise RuntimeError("boom")
    assert (x * 1.0)._backward is not None


def test_constant_graph_not_recorded():
    y = Tensor([1.0]) * Tensor([2.0])
    assert y._backward is None and not y.requires_grad


def test_detach_cuts_history():
    x = Tensor([3.0], requires_grad=True)
    y = (x * 2.0).detach()
    assert not y.requires_grad
    (y * 5.0).sum().backward() if y.requires_grad else None
    assert x.grad is None


def test_backward_is_single_use():
    """After a sweep the graph is unwired; a second sweep moves nothing."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    g1 = x.grad.copy()
    loss.backward()   # no-op on the unwired graph
    np.testing.assert_allclose(x.grad, g1)
    assert loss._parents == () and loss._backward is None


def test_zero_grad():
    x = Tensor([1.0], requires_grad=True)
    (x * 3.0).sum().backward()
    x.zero_grad()
    np.testing.assert_allclose(x.grad, [0.0])


def test_grad_accumulates_across_sweeps():
    x = Tensor([2.0], requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()   # fresh graph, grads add
    np.testing.assert_allclose(x.grad, [6.0])


def test_debug_checks_catch_nonfinite_forward():
    T.set_debug_checks(True)
    try:
        with pytest.raises(FloatingPointError):
            T.log(Tensor([-1.0]))
    finally:
        T.set_debug_checks(False)


def test_debug_checks_off_by_default():
    out = T.log(Tensor([-1.0]))   # nan passes through silently
    assert np.isnan(out.data[0])


# ---- unary op oracles ----

def test_unary_forward_oracles():
    x = np.array([0.5, 1.5])
    np.testing.assert_allclose(T.exp(Tensor(x)).data, np.exp(x))
    np.testing.assert_allclose(T.log(Tensor(x)).data, np.log(x))
    np.testing.assert_allclose(T.sqrt(Tensor(x)).data, np.sqrt(x))
    np.testing.assert_allclose(T.sin(Tensor(x)).data, np.sin(x))
    np.testing.assert_allclose(T.cos(Tensor(x)).data, np.cos(x))


def test_relu_zero_gradient_at_kink():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    T.relu(x).sum().backward()
    np.testing.assert_allclose(x.grad, [0.0, 0.0, 1.0])   # subgradient 0 at 0


def test_sigmoid_value_and_stability():
    assert T.sigmoid(Tensor(0.5)).item() == pytest.approx(0.6224593312018546, abs=1e-12)
    big = T.sigmoid(Tensor([800.0, -800.0]))
    np.testing.assert_allclose(big.data, [1.0, 0.0], atol=1e-12)
    assert np.all(np.isfinite(big.data))


# ---- shape ops ----

def test_reshape_transpose_roundtrip():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 4))
    t = Tensor(x, requires_grad=True)
    y = t.reshape(6, 4).transpose()
    np.testing.assert_allclose(y.data, x.reshape(6, 4).T)
    (y * y).sum().backward()
    np.testing.assert_allclose(t.grad, 2 * x)


def test_getitem_forward_and_repeated_index_backward():
    x = Tensor(np.arange(15.0).reshape(5, 3), requires_grad=True)
    idx = np.array([1, 1, 4])
    y = x[idx]
    np.testing.assert_allclose(y.data, x.data[idx])
    y.sum().backward()
    expect = np.zeros((5, 3))
    expect[1] = 2.0   # picked twice, contributions must add
    expect[4] = 1.0
    np.testing.assert_allclose(x.grad, expect)


def test_concat_forward_backward_split():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.full((2, 3), 2.0), requires_grad=True)
    y = T.concat([a, b], axis=1)
    assert y.shape == (2, 5)
    w = np.arange(10.0).reshape(2, 5)
    (y * Tensor(w)).sum().backward()
    np.testing.assert_allclose(a.grad, w[:, :2])
    np.testing.assert_allclose(b.grad, w[:, 2:])


def test_concat_rejects_empty():
    with pytest.raises(ValueError):
        T.concat([])


def test_sum_mean_axis_handling():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 4))
    t = Tensor(x)
    np.testing.assert_allclose(t.sum().data, x.sum())
    np.testing.assert_allclose(t.sum(axis=1).data, x.sum(axis=1))
    np.testing.assert_allclose(t.mean(axis=(0, 2)).data, x.mean(axis=(0, 2)))
    np.testing.assert_allclose(
        t.sum(axis=2, keepdims=True).data, x.sum(axis=2, keepdims=True))


def test_mean_backward_scales():
    x = Tensor(np.ones((2, 4)), requires_grad=True)
    x.mean().backward()
    np.testing.assert_allclose(x.grad, np.full((2, 4), 1.0 / 8.0))


# ---- linear algebra and conv ----

def test_matmul_oracle_and_rank_check():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, a @ b)
    with pytest.raises(ValueError):
        T.matmul(Tensor(a), Tensor(rng.normal(size=(5, 4))))
    with pytest.raises(ValueError):
        T.matmul(Tensor(rng.normal(size=4)), Tensor(b))


def test_pick_gathers_rows():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    out = T.pick(x, np.array([1, 0, 3]))
    np.testing.assert_allclose(out.data, [1.0, 4.0, 11.0])


def test_pick_validates_range():
    x = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        T.pick(x, np.array([0, 3]))
    with pytest.raises(ValueError):
        T.pick(x, np.array([-1, 0]))


def test_conv1x1_is_channel_matmul():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 5, 5))
    w = rng.normal(size=(4, 3))
    out = T.conv1x1(Tensor(x), Tensor(w))
    expect = np.einsum("oc,bchw->bohw", w, x)
    np.testing.assert_allclose(out.data, expect, atol=1e-12)


def test_conv1x1_rank3_input():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4, 4))
    w = rng.normal(size=(2, 3))
    out = T.conv1x1(Tensor(x), Tensor(w))
    assert out.shape == (2, 4, 4)
    np.testing.assert_allclose(out.data, np.einsum("oc,chw->ohw", w, x), atol=1e-12)


def test_avg_pool_to_means_blocks():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    out = T.avg_pool_to(Tensor(x), (2, 2))
    # each output cell is the mean of a 2x2 block
    np.testing.assert_allclose(out.data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def test_avg_pool_to_validates_divisibility():
    with pytest.raises(ValueError):
        T.avg_pool_to(Tensor(np.zeros((1, 1, 4, 4))), (3, 2))


def test_fully_connected_affine():
    x = np.array([[1.0, 2.0]])
    w = np.array([[3.0, 4.0], [5.0, 6.0], [7.0, 8.0]])
    b = np.array([0.1, 0.2, 0.3])
    out = T.fully_connected(Tensor(x), Tensor(w), Tensor(b))
    np.testing.assert_allclose(out.data, x @ w.T + b)


# ---- batch norm ----

def test_batch_norm_train_uses_biased_variance():
    rng = np.random.default_rng(6)
    x = rng.normal(2.0, 3.0, size=(4, 2, 3, 3))
    g = Tensor(np.ones(2))
    b = Tensor(np.zeros(2))
    out, mu, var = T.batch_norm_train(Tensor(x), g, b, 1e-5)
    np.testing.assert_allclose(mu, x.mean(axis=(0, 2, 3)), atol=1e-12)
    np.testing.assert_allclose(var, x.var(axis=(0, 2, 3)), atol=1e-12)  # ddof 0
    # normalized output has zero mean, unit variance per channel
    np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.data.var(axis=(0, 2, 3)), 1.0, atol=1e-3)


def test_batch_norm_eval_is_affine_in_x():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 3, 2, 2))
    g = Tensor(rng.normal(size=3))
    b = Tensor(rng.normal(size=3))
    rm = rng.normal(size=3)
    rv = rng.uniform(0.5, 2.0, size=3)
    out = T.batch_norm_eval(Tensor(x), g, b, rm, rv, 1e-5)
    scale = g.data / np.sqrt(rv + 1e-5)
    expect = x * scale[:, None, None] + (b.data - rm * scale)[:, None, None]
    np.testing.assert_allclose(out.data, expect, atol=1e-12)


# ---- softmax family ----

def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(8)
    for k in range(10):
        z = rng.normal(scale=5.0, size=(3, 6))
        s = T.softmax_t(Tensor(z), tau=1.0 + k * 0.5)
        np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(s.data > 0)


def test_softmax_temperature_flattens():
    z = Tensor([2.0, 0.0])
    sharp = T.softmax_t(z, 0.5).data
    flat = T.softmax_t(z, 8.0).data
    assert sharp[0] > flat[0] > 0.5


def test_softmax_oracle_two_logits():
    # softmax([1, 0]) = [e/(e+1), 1/(e+1)]
    s = T.softmax_t(Tensor([1.0, 0.0]), 1.0)
    assert s.data[0] == pytest.approx(np.e / (np.e + 1.0), abs=1e-14)


def test_softmax_extreme_logits_stay_finite():
    s = T.softmax_t(Tensor([1000.0, -1000.0]), 1.0)
    assert np.all(np.isfinite(s.data))
    np.testing.assert_allclose(s.data, [1.0, 0.0], atol=1e-12)


def test_log_softmax_consistent_with_softmax():
    rng = np.random.default_rng(9)
    z = rng.normal(size=(4, 5))
    ls = T.log_softmax(Tensor(z), 2.0)
    s = T.softmax_t(Tensor(z), 2.0)
    np.testing.assert_allclose(ls.data, np.log(s.data), atol=1e-12)


def test_softmax_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        T.softmax_t(Tensor([1.0]), 0.0)
    with pytest.raises(ValueError):
        T.log_softmax(Tensor([1.0]), -1.0)


# ---- seeded property loops ----

def test_property_unbroadcast_matches_manual_sum():
    rng = np.random.default_rng(10)
    for _ in range(30):
        rows = int(rng.integers(1, 5))
        cols = int(rng.integers(1, 5))
        a = Tensor(rng.normal(size=(rows, cols)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, cols)), requires_grad=True)
        w = rng.normal(size=(rows, cols))
        ((a * b) * Tensor(w)).sum().backward()
        np.testing.assert_allclose(b.grad, (w * a.data).sum(axis=0, keepdims=True),
                                   atol=1e-12)


def test_property_pool_then_sum_equals_scaled_sum():
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = rng.normal(size=(2, 3, 4, 4))
        t = Tensor(x, requires_grad=True)
        T.avg_pool_to(t, (2, 2)).sum().backward()
        # every input cell belongs to exactly one 2x2 block
        np.testing.assert_allclose(t.grad, np.full_like(x, 0.25), atol=1e-12)
