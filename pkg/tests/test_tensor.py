
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalemoe.exceptions import (
    CorruptRecord,
    DegenerateBatch,
    GraphConsumed,
    InvalidAxis,
    InvalidHyperparameter,
    NonFiniteInput,
    NonScalarLoss,
    ShapeMismatch,
)
from scalemoe.tensor import Tensor, backward, mmt, no_grad, ops

from gradcases import OP_CASES, op_case_error
from oracles import bilinear_naive, conv2d_naive, softmax_list


def param(a):
    return Tensor(a, requires_grad=True)


# -- matmul -----------------------------------------------------------------


def test_matmul_identity():
    out = ops.matmul(np.eye(2), [[1, 2], [3, 4]])
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_diagonal_scaling():
    out = ops.matmul([[1, 0], [0, 2]], [[3], [5]])
    np.testing.assert_array_equal(out.data, [[3], [10]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeMismatch, match=r"\(2, 3\).*\(2, 3\)"):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))


# -- conv2d -----------------------------------------------------------------


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 4))
    out = ops.conv2d(x, np.ones((1, 1, 1, 1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_constant_field():
    out = ops.conv2d(np.full((1, 1, 6, 6), 0.7), np.ones((1, 1, 3, 3)))
    np.testing.assert_allclose(out.data, 9 * 0.7, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_conv_matches_naive_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    expected = conv2d_naive(x, w)
    np.testing.assert_allclose(ops.conv2d(x, w).data, expected, rtol=0, atol=1e-12)
    # the fixed-order path reproduces the loop bit for bit
    np.testing.assert_array_equal(ops.conv2d(x, w, exact=True).data, expected)


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (2, 1), (3, 2)])
def test_conv_stride_pad_exact(stride, pad):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(2, 3, 3, 2))
    expected = conv2d_naive(x, w, stride, pad)
    np.testing.assert_array_equal(ops.conv2d(x, w, stride, pad, exact=True).data, expected)
    np.testing.assert_allclose(ops.conv2d(x, w, stride, pad).data, expected, atol=1e-12)


def test_conv_output_size_formula():
    out = ops.conv2d(np.ones((1, 1, 9, 7)), np.ones((1, 1, 3, 3)), stride=2, pad=1)
    assert out.shape == (1, 1, (9 + 2 - 3) // 2 + 1, (7 + 2 - 3) // 2 + 1)


def test_conv_errors():
    with pytest.raises(InvalidHyperparameter):
        ops.conv2d(np.ones((1, 1, 4, 4)), np.ones((1, 1, 3, 3)), stride=0)
    with pytest.raises(InvalidHyperparameter):
        ops.conv2d(np.ones((1, 1, 4, 4)), np.ones((1, 1, 3, 3)), pad=-1)
    with pytest.raises(ShapeMismatch):
        ops.conv2d(np.ones((1, 2, 4, 4)), np.ones((1, 1, 3, 3)))
    with pytest.raises(ShapeMismatch):
        ops.conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)))


# -- softmax ----------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(ops.softmax([0.0, 0.0, 0.0]).data, [1 / 3] * 3, atol=1e-15)


def test_softmax_inverts_log():
    out = ops.softmax(np.log([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-15)


def test_softmax_shift_invariance():
    x = np.random.default_rng(1).normal(size=(4, 5))
    np.testing.assert_allclose(ops.softmax(x, 1).data, ops.softmax(x + 123.4, 1).data, atol=1e-15)


def test_softmax_matches_scalar_oracle():
    x = np.random.default_rng(2).normal(size=6) * 5
    np.testing.assert_allclose(ops.softmax(x).data, softmax_list(list(x)), atol=1e-15)


def test_softmax_invalid_axis():
    with pytest.raises(InvalidAxis):
        ops.softmax(np.ones((2, 3)), axis=2)


def test_softmax_mask_zeroes_excluded():
    out = ops.softmax([[1.0, 2.0, 3.0]], axis=1, mask=[[True, True, False]])
    np.testing.assert_allclose(out.data, [softmax_list([1.0, 2.0]) + [0.0]], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 5),
    st.integers(1, 7),
    st.floats(0.1, 50.0),
    st.integers(0, 2**32 - 1),
)
def test_softmax_rows_sum_to_one(rows, cols, scale, seed):
    x = np.random.default_rng(seed).normal(size=(rows, cols)) * scale
    s = ops.softmax(x, axis=1).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
    assert (s >= 0).all() and (s <= 1).all()


# -- bilinear resize --------------------------------------------------------


def test_resize_identity():
    x = np.random.default_rng(3).normal(size=(1, 2, 4, 5))
    np.testing.assert_array_equal(ops.bilinear_resize(x, 4, 5).data, x)


@pytest.mark.parametrize("size", [(1, 1), (3, 7), (8, 8), (2, 16)])
def test_resize_constant(size):
    x = np.full((1, 1, 4, 4), 2.5)
    np.testing.assert_allclose(ops.bilinear_resize(x, *size).data, 2.5, atol=1e-14)


def test_resize_single_source():
    out = ops.bilinear_resize(np.full((1, 1, 1, 1), 4.0), 2, 2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))


@pytest.mark.parametrize("shape,out", [((2, 4), (4, 8)), ((16, 16), (4, 4)), ((3, 5), (7, 2))])
def test_resize_matches_pointwise_oracle(shape, out):
    x = np.random.default_rng(4).normal(size=(2, 3) + shape)
    np.testing.assert_allclose(ops.bilinear_resize(x, *out).data, bilinear_naive(x, *out), atol=1e-13)


def test_resize_bad_size():
    with pytest.raises(InvalidHyperparameter):
        ops.bilinear_resize(np.ones((1, 1, 2, 2)), 0, 2)


# -- backward ---------------------------------------------------------------


def test_backward_bilinear_form():
    rng = np.random.default_rng(5)
    a, b = param(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
    backward((a * b).sum())
    np.testing.assert_array_equal(a.grad, b.data)


def test_backward_cross_entropy_closed_form():
    logits = param([[0.3, -1.2, 2.0, 0.1]])
    loss = ops.cross_entropy(logits, [2], reduction="sum")
    backward(loss)
    p = np.array(softmax_list([0.3, -1.2, 2.0, 0.1]))
    np.testing.assert_allclose(logits.grad[0], p - np.eye(4)[2], atol=1e-15)


def test_backward_non_scalar():
    with pytest.raises(NonScalarLoss):
        backward(param(np.ones(3)) * 2.0)


def test_backward_twice_raises():
    a = param(np.ones(3))
    loss = (a * a).sum()
    backward(loss)
    with pytest.raises(GraphConsumed):
        backward(loss)


def test_gradients_accumulate_over_shared_nodes():
    a = param([1.0, 2.0])
    h = a * 3.0
    backward((h * h).sum() + h.sum())
    np.testing.assert_allclose(a.grad, 2 * 9 * a.data + 3.0)


def test_gradients_accumulate_across_calls():
    a = param([1.0, -1.0])
    backward((a * 2.0).sum())
    backward((a * 2.0).sum())
    np.testing.assert_array_equal(a.grad, [4.0, 4.0])


def test_no_grad_records_nothing():
    a = param([1.0])
    with no_grad():
        out = a * 2.0
    assert out.is_leaf and not out.requires_grad


def test_nonfinite_input_rejected():
    with pytest.raises(NonFiniteInput):
        Tensor([1.0, np.nan])
    t = Tensor([1.0, 2.0])
    t.data[0] = np.inf
    with pytest.raises(NonFiniteInput):
        ops.relu(t)


# -- finite-difference suite ------------------------------------------------

SEEDS = range(5)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_finite_differences(name, seed):
    err = op_case_error(name, seed)
    assert err < 1e-4, err


# -- batch norm -------------------------------------------------------------


def test_batch_norm_eval_is_batch_independent():
    rng = np.random.default_rng(6)
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
    g, b = rng.normal(size=3), rng.normal(size=3)
    x = rng.normal(size=(4, 3, 2, 2))
    full = ops.batch_norm2d(x, g, b, rm, rv, training=False).data
    single = ops.batch_norm2d(x[1:2], g, b, rm, rv, training=False).data
    np.testing.assert_array_equal(full[1:2], single)
    # eval mode leaves the running statistics alone
    rm0 = rm.copy()
    ops.batch_norm2d(x, g, b, rm, rv, training=False)
    np.testing.assert_array_equal(rm, rm0)


def test_batch_norm_running_update():
    x = np.random.default_rng(7).normal(size=(3, 2, 2, 2))
    rm, rv = np.zeros(2), np.ones(2)
    ops.batch_norm2d(x, np.ones(2), np.zeros(2), rm, rv, training=True)
    n = 12
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))


def test_batch_norm_degenerate():
    with pytest.raises(DegenerateBatch):
        ops.batch_norm2d(np.ones((1, 2, 1, 1)), np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), training=True)


# -- .mmt files -------------------------------------------------------------


def test_mmt_layout():
    data = mmt.encode(np.array([[1.0, 2.0, 3.0]]))
    assert data[:4] == b"MMT1"
    assert data[4:16] == (2).to_bytes(4, "little") + (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    np.testing.assert_array_equal(np.frombuffer(data[16:], "<f4"), [1, 2, 3])


def test_mmt_roundtrip_truncates_to_float32():
    x = np.random.default_rng(8).normal(size=(2, 3, 4))
    back = mmt.decode(mmt.encode(x))
    np.testing.assert_array_equal(back, x.astype(np.float32).astype(np.float64))
    assert mmt.encode(back) == mmt.encode(x)


def test_mmt_scalar_and_corruption():
    assert mmt.decode(mmt.encode(np.float64(3.5))) == 3.5
    with pytest.raises(CorruptRecord):
        mmt.decode(b"MMT2" + bytes(8))
    with pytest.raises(CorruptRecord):
        mmt.decode(mmt.encode(np.ones(4))[:-1])
