import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rimr.tensor import (Adam, Parameter, Tensor, adam_step, backward, batch_norm, concat, conv2d, conv3d,
                         conv_transpose2d, l1, leaky_relu, linear, mse, reduce_topk_max, relu, sigmoid)
from rimr.tensor.gradcheck import check_gradients, numerical_grad
from rimr.tensor.ops import RunningStats, mean

SEEDS = range(5)
TOL = 1e-4


def p(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


# -- linear ---------------------------------------------------------------

def test_linear_identity_weight(f64):
    out = linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.data, [[1, 2]])


def test_linear_hand_dot(f64):
    out = linear(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]), Tensor([5.0]))
    np.testing.assert_array_equal(out.data, [[16]])


def test_linear_weight_grad_matches_finite_differences(f64):
    x = Tensor([[1.0, 2.0]])
    w = p([[0.3], [-0.7]])
    b = Tensor([0.0])
    f = lambda: linear(x, w, b).sum()  # noqa: E731
    backward(f())
    np.testing.assert_allclose(w.grad, [[1], [2]])
    np.testing.assert_allclose(numerical_grad(f, w, step=1e-5), [[1], [2]], rtol=1e-6)


def test_linear_rejects_shape_mismatch():
    with pytest.raises(ValueError, match=r"\(1, 3\).*\(2, 1\)"):
        linear(Tensor([[1.0, 2.0, 3.0]]), Tensor([[1.0], [2.0]]))


# -- conv3d ---------------------------------------------------------------

def test_conv3d_sum_of_ones(f64):
    out = conv3d(Tensor(np.ones((1, 1, 2, 2, 2))), Tensor(np.ones((1, 1, 2, 2, 2))))
    assert out.shape == (1, 1, 1, 1, 1)
    assert out.data.item() == 8.0


def test_conv3d_delta_kernel_crops(f64, rng):
    x = rng.normal(size=(1, 1, 4, 5, 6))
    k = np.zeros((1, 1, 2, 2, 2))
    k[0, 0, 0, 0, 0] = 1
    out = conv3d(Tensor(x), Tensor(k))
    np.testing.assert_array_equal(out.data, x[:, :, :3, :4, :5])


def test_conv3d_matches_direct_loops(f64, rng):
    x = rng.normal(size=(2, 2, 5, 4, 6))
    k = rng.normal(size=(3, 2, 3, 2, 3))
    out = conv3d(Tensor(x), Tensor(k), stride=(2, 1, 2), pad=(1, 0, 1)).data
    xp = np.pad(x, [(0, 0), (0, 0), (1, 1), (0, 0), (1, 1)])
    ref = np.zeros_like(out)
    for n, o, i, j, l in np.ndindex(*ref.shape):
        patch = xp[n, :, 2 * i:2 * i + 3, j:j + 2, 2 * l:2 * l + 3]
        ref[n, o, i, j, l] = (patch * k[o]).sum()
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_conv3d_gradcheck(f64, seed):
    r = np.random.default_rng(seed)
    x = p(r.normal(size=(1, 2, 4, 4, 4)))
    k = p(r.normal(size=(2, 2, 2, 3, 2)))
    target = r.normal(size=(1, 2, 2, 2, 3))
    f = lambda: mse(conv3d(x, k, stride=(2, 1, 2), pad=(0, 0, 1)), Tensor(target))  # noqa: E731
    assert check_gradients(f, [x, k]) < TOL


def test_conv3d_rejects_nonpositive_output():
    with pytest.raises(ValueError, match="non-positive"):
        conv3d(Tensor(np.ones((1, 1, 2, 2, 2))), Tensor(np.ones((1, 1, 3, 3, 3))))


# -- conv2d / conv_transpose2d -------------------------------------------

def test_conv2d_delta_kernel_identity_interior(f64, rng):
    x = rng.normal(size=(1, 1, 6, 6))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    out = conv2d(Tensor(x), Tensor(k), pad=1)
    np.testing.assert_array_equal(out.data, x)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("size,stride,pad,ksize", [(5, 1, 0, 3), (5, 2, 1, 3), (6, 2, 1, 4), (5, 1, 1, 2)])
def test_conv_transpose_is_adjoint(f64, seed, size, stride, pad, ksize):
    r = np.random.default_rng(seed)
    k = Tensor(r.normal(size=(2, 1, ksize, ksize)))
    x = Tensor(r.normal(size=(1, 1, size, size)))
    y = Tensor(r.normal(size=conv2d(x, k, stride, pad).shape))
    back = conv_transpose2d(y, k, stride, pad)
    assert back.shape == x.shape
    lhs = float((conv2d(x, k, stride, pad).data * y.data).sum())
    rhs = float((x.data * back.data).sum())
    assert abs(lhs - rhs) < 1e-10


def test_conv_transpose_single_value_expands(f64):
    out = conv_transpose2d(Tensor([[[[2.5]]]]), Tensor(np.ones((1, 1, 3, 3))))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.5))


@pytest.mark.parametrize("seed", SEEDS)
def test_conv2d_and_transpose_gradcheck(f64, seed):
    r = np.random.default_rng(seed)
    x = p(r.normal(size=(2, 2, 5, 5)))
    k1 = p(r.normal(size=(3, 2, 3, 3)))
    k2 = p(r.normal(size=(3, 2, 4, 4)))

    def f():
        h = conv2d(x, k1, stride=2, pad=1)          # (2,3,3,3)
        return mean(conv_transpose2d(h, k2, stride=2, pad=1) * conv_transpose2d(h, k2, 2, 1))

    assert check_gradients(f, [x, k1, k2]) < TOL


def test_conv_transpose_output_extent():
    out = conv_transpose2d(Tensor(np.ones((1, 4, 4, 4))), Tensor(np.ones((4, 2, 4, 4))), stride=2, pad=1)
    assert out.shape == (1, 2, 8, 8)


def test_conv_transpose_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        conv_transpose2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((4, 2, 4, 4))))


# -- top-k ----------------------------------------------------------------

def test_topk_examples(f64):
    assert reduce_topk_max(Tensor([3.0, 1.0, 2.0]), 0, 1).data.tolist() == [3]
    assert reduce_topk_max(Tensor([3.0, 1.0, 2.0]), 0, 2).data.tolist() == [3, 2]
    x = p([5.0, 5.0, 1.0])
    out = reduce_topk_max(x, 0, 2)
    assert out.data.tolist() == [5, 5]
    backward(out.sum())
    assert x.grad.tolist() == [1, 1, 0]


def test_topk_tie_routes_to_lowest_index(f64):
    x = p([1.0, 7.0, 7.0, 7.0])
    backward(reduce_topk_max(x, 0, 1).sum())
    assert x.grad.tolist() == [0, 1, 0, 0]


def test_topk_rejects_k_too_large():
    with pytest.raises(ValueError):
        reduce_topk_max(Tensor([1.0, 2.0]), 0, 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=12), st.data())
def test_topk_sorted_subset_property(values, data):
    k = data.draw(st.integers(1, len(values)))
    out = reduce_topk_max(Tensor(np.array(values, dtype=np.float64)), 0, k).data.tolist()
    assert out == sorted(out, reverse=True)
    assert out == sorted(values, reverse=True)[:k]


@pytest.mark.parametrize("seed", SEEDS)
def test_topk_gradcheck(f64, seed):
    r = np.random.default_rng(seed)
    x = p(r.normal(size=(3, 7, 2)))
    w = Tensor(r.normal(size=(3, 4, 2)))
    assert check_gradients(lambda: (reduce_topk_max(x, 1, 4) * w).sum(), [x]) < TOL


# -- activations ----------------------------------------------------------

def test_activation_values(f64):
    assert relu(Tensor([-1.0, 2.0])).data.tolist() == [0, 2]
    assert leaky_relu(Tensor([-10.0]), 0.2).data.tolist() == [-2]
    assert sigmoid(Tensor([0.0])).data.tolist() == [0.5]
    assert np.all(np.isfinite(sigmoid(Tensor([-1000.0, 1000.0])).data))


@pytest.mark.parametrize("seed", SEEDS)
def test_activation_gradcheck(f64, seed):
    r = np.random.default_rng(seed)
    x = p(r.normal(size=(4, 5)) + 0.05)  # keep away from the relu kink
    x.data[np.abs(x.data) < 1e-3] = 0.5
    w = Tensor(r.normal(size=(4, 5)))
    for fn in (relu, lambda t: leaky_relu(t, 0.2), sigmoid):
        assert check_gradients(lambda: (fn(x) * w).sum(), [x]) < TOL


# -- batch norm -----------------------------------------------------------

def _bn_params(c):
    return p(np.ones(c)), p(np.zeros(c))


def test_batch_norm_standardized_input_passes_through(f64, rng):
    z = rng.normal(size=(64, 2))
    z = (z - z.mean(0)) / z.std(0)
    g, b = _bn_params(2)
    out = batch_norm(Tensor(z), g, b, RunningStats.for_channels(2, np.float64))
    np.testing.assert_allclose(out.data, z / np.sqrt(1 + 1e-5), rtol=1e-12)
    np.testing.assert_allclose(out.data, z, atol=1e-5 * 4)


def test_batch_norm_two_values(f64):
    g, b = _bn_params(1)
    out = batch_norm(Tensor([[1.0], [3.0]]), g, b, None)
    np.testing.assert_allclose(out.data.ravel(), [-1 / np.sqrt(1 + 1e-5), 1 / np.sqrt(1 + 1e-5)])


def test_batch_norm_running_stats_and_eval(f64, rng):
    g, b = _bn_params(3)
    stats = RunningStats.for_channels(3, np.float64)
    x = rng.normal(2.0, 3.0, size=(5, 3, 4))
    batch_norm(Tensor(x), g, b, stats, mode="train")
    mu = x.mean(axis=(0, 2))
    np.testing.assert_allclose(stats.mean, 0.1 * mu)
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(axis=(0, 2), ddof=1))
    first = batch_norm(Tensor(x), g, b, stats, mode="eval").data
    second = batch_norm(Tensor(x), g, b, stats, mode="eval").data
    np.testing.assert_array_equal(first, second)


def test_batch_norm_rejects_bad_params():
    g, b = _bn_params(2)
    with pytest.raises(ValueError):
        batch_norm(Tensor(np.ones((4, 3))), g, b, None)
    with pytest.raises(ValueError):
        batch_norm(Tensor(np.ones((0, 2))), g, b, None)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batch_norm_gradcheck(f64, seed, mode):
    r = np.random.default_rng(seed)
    x = p(r.normal(size=(3, 2, 4)))
    g = p(r.uniform(0.5, 1.5, size=2))
    b = p(r.normal(size=2))
    w = Tensor(r.normal(size=(3, 2, 4)))
    stats = RunningStats(r.normal(size=2), r.uniform(0.5, 2, size=2))

    def f():
        # eval mode must not mutate; train mode mutates running stats only
        return (batch_norm(x, g, b, RunningStats(stats.mean.copy(), stats.var.copy()), mode) * w).sum()

    assert check_gradients(f, [x, g, b]) < TOL


# -- losses ---------------------------------------------------------------

def test_loss_values(f64):
    x = Tensor([1.0, 2.0])
    assert mse(x, x).data == 0
    assert mse(Tensor([0.0, 2.0]), Tensor([1.0, 0.0])).data == 2.5
    assert l1(Tensor([0.0, 2.0]), Tensor([1.0, 0.0])).data == 1.5
    with pytest.raises(ValueError, match="shape"):
        mse(Tensor([1.0]), Tensor([1.0, 2.0]))
    with pytest.raises(ValueError, match="shape"):
        l1(Tensor([1.0]), Tensor([1.0, 2.0]))


@pytest.mark.parametrize("seed", SEEDS)
def test_loss_gradcheck(f64, seed):
    r = np.random.default_rng(seed)
    a = p(r.normal(size=(3, 4)))
    b = p(r.normal(size=(3, 4)))
    assert check_gradients(lambda: mse(a, b), [a, b]) < TOL
    assert check_gradients(lambda: l1(a, b), [a, b]) < TOL


# -- backward -------------------------------------------------------------

def test_backward_linear_in_w(f64):
    x = Tensor([1.0, -2.0, 3.0])
    w = p([0.1, 0.2, 0.3])
    backward((w * x).sum())
    np.testing.assert_array_equal(w.grad, x.data)


def test_backward_accumulates(f64, rng):
    w = p(rng.normal(size=(2, 3)))
    x = Tensor(rng.normal(size=(4, 2)))
    f = lambda: mse(linear(x, w), Tensor(np.zeros((4, 3))))  # noqa: E731
    backward(f())
    once = w.grad.copy()
    backward(f())
    np.testing.assert_array_equal(w.grad, 2 * once)


def test_backward_rejects_nonscalar():
    with pytest.raises(ValueError, match="scalar"):
        backward(p([1.0, 2.0]) * 2.0)


@pytest.mark.parametrize("seed", SEEDS)
def test_composite_conv_leaky_mse_gradcheck(f64, seed):
    r = np.random.default_rng(seed)
    x = p(r.normal(size=(1, 1, 4, 4, 4)))
    k = p(r.normal(size=(2, 1, 2, 2, 2)))
    target = Tensor(r.normal(size=(1, 2, 3, 3, 3)))
    f = lambda: mse(leaky_relu(conv3d(x, k), 0.2), target)  # noqa: E731
    assert check_gradients(f, [x, k]) < TOL


def test_shared_subgraph_gradients(f64, rng):
    a = p(rng.normal(size=(3,)))
    f = lambda: (concat([a, a * a], 0) * Tensor(np.arange(6.0))).sum()  # noqa: E731
    assert check_gradients(f, [a]) < TOL


def test_deterministic_forward(rng):
    x = Tensor(rng.normal(size=(2, 3, 8, 8)))
    k = Tensor(rng.normal(size=(4, 3, 3, 3)))
    assert np.array_equal(conv2d(x, k, 2, 1).data, conv2d(x, k, 2, 1).data)


# -- adam -----------------------------------------------------------------

def test_adam_zero_grad_keeps_param(f64):
    w = Parameter(np.array([1.5]), name="w")
    w.grad = np.zeros(1)
    adam_step([w], 0.1, 0.5, 0.999, 1e-8, step=1)
    assert w.data.tolist() == [1.5]


def test_adam_first_step_moves_by_lr(f64):
    w = Parameter(np.array([1.0]), name="w")
    w.grad = np.ones(1)
    adam_step([w], 0.1, 0.9, 0.999, 1e-8, step=1)
    np.testing.assert_allclose(w.data, [0.9], atol=1e-7)
    np.testing.assert_array_equal(w.grad, [1.0])


def test_adam_missing_grad_names_param():
    w = Parameter(np.array([1.0]), name="enc.0.weight")
    with pytest.raises(ValueError, match="enc.0.weight"):
        adam_step([w], 0.1, 0.9, 0.999, 1e-8, step=1)


def _train_tiny(seed):
    r = np.random.default_rng(seed)
    w = Parameter(r.normal(size=(3, 2)).astype(np.float32), name="w")
    x = Tensor(r.normal(size=(5, 3)).astype(np.float32))
    opt = Adam([w])
    for _ in range(10):
        opt.zero_grad()
        backward(mse(linear(x, w), Tensor(np.ones((5, 2), dtype=np.float32))))
        opt.step()
    return w.data.copy()


def test_adam_determinism():
    assert np.array_equal(_train_tiny(3), _train_tiny(3))


def test_frozen_module_gets_no_grad_after_restore(f64, rng):
    from rimr.tensor.nn import Linear, frozen
    a, b = Linear(3, 4, rng), Linear(4, 1, rng)
    x = Tensor(rng.normal(size=(5, 3)))
    with frozen(b):
        loss = mean(b(relu(a(x))))
    # flags are back on by the time backward runs; the graph must remember they were off
    assert all(q.requires_grad for q in b.parameters())
    backward(loss)
    assert all(q.grad is None for q in b.parameters())
    assert all(q.grad is not None for q in a.parameters())
