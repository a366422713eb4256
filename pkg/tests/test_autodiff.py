import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gatiaa.autodiff import ops
from gatiaa.autodiff.gradcheck import ERROR_FLOOR, grad_check, relative_error
from gatiaa.autodiff.tensor import BranchLog, Tape, backward, constant, parameter
from gatiaa.utils.errors import BackwardError, EmptyTensorError, GradCheckError, ShapeError


def _check(objective, params, tolerance=1e-4):
    result = grad_check(objective, params, h=1e-5, max_coords=None)
    assert result.max_rel_error < tolerance, result.per_parameter
    return result


def test_matmul_forward_and_gradient(rng):
    """matmul gradients agree with central differences."""
    a = parameter(rng.standard_normal((3, 4)), name='a')
    b = parameter(rng.standard_normal((4, 2)), name='b')
    np.testing.assert_allclose(ops.matmul(a, b).value, a.value @ b.value)
    _check(lambda: ops.sum_all(ops.multiply(ops.matmul(a, b), ops.matmul(a, b))), [a, b])


def test_elementwise_and_row_ops_gradients(rng):
    x = parameter(rng.standard_normal((4, 3)), name='x')
    y = parameter(rng.standard_normal((4, 3)), name='y')
    row = parameter(rng.standard_normal(3), name='row')

    def objective():
        z = ops.subtract(ops.add(x, ops.scale(y, 0.5)), ops.multiply(x, y))
        z = ops.add_row(z, row)
        z = ops.concat([z, ops.transpose(ops.transpose(x))], axis=1)
        return ops.mean_all(ops.multiply(z, z))

    _check(objective, [x, y, row])


def test_softmax_and_activation_gradients(rng):
    x = parameter(rng.standard_normal((5, 5)), name='x')
    mask = rng.random((5, 5)) > 0.3
    mask[2] = False
    weights = constant(rng.standard_normal((5, 5)))

    def objective():
        s = ops.add(ops.row_softmax(x), ops.masked_row_softmax(x, mask))
        s = ops.add(s, ops.sigmoid(x))
        s = ops.add(s, ops.exp(ops.scale(x, 0.1)))
        s = ops.add(s, ops.log(ops.add(ops.exp(x), constant(np.ones((5, 5))))))
        return ops.sum_all(ops.multiply(s, weights))

    _check(objective, [x])


def test_segment_reductions_and_gather_gradients(rng):
    x = parameter(rng.standard_normal((6, 3)), name='x')
    index = np.array([0, 0, 1, 2, 2, 2])

    def objective():
        means = ops.segment_mean(x, index, 3)
        sums = ops.segment_sum(x, index, 3)
        rows = ops.take_rows(x, [0, 0, 5])
        stacked = ops.concat([means, sums, rows, ops.column_mean(x)], axis=0)
        return ops.sum_all(ops.multiply(stacked, stacked))

    _check(objective, [x])


def test_relu_leaky_relu_and_clip_away_from_kinks():
    x = parameter(np.array([[-2.0, -0.5, 0.3, 1.7]]), name='x')
    weights = constant(np.array([[1.0, -2.0, 3.0, 0.5]]))

    def objective():
        out = ops.add(ops.relu(x), ops.leaky_relu(x, 0.2))
        out = ops.add(out, ops.clip(x, -1.0, 1.0))
        return ops.sum_all(ops.multiply(out, weights))

    _check(objective, [x])


def test_masked_softmax_all_masked_row_is_zero():
    x = constant(np.arange(6, dtype=np.float64).reshape(2, 3))
    mask = np.array([[True, False, True], [False, False, False]])
    y = ops.masked_row_softmax(x, mask).value
    np.testing.assert_allclose(y[0].sum(), 1.0)
    assert y[0, 1] == 0.0
    assert np.all(y[1] == 0.0)


def test_backward_accumulates_across_calls(rng):
    """Two backward passes without zero_grad add up."""
    w = parameter(rng.standard_normal((2, 2)))
    for _ in range(2):
        with Tape():
            loss = ops.sum_all(ops.multiply(w, w))
            backward(loss)
    np.testing.assert_allclose(w.grad, 4 * w.value)
    w.zero_grad()
    assert np.all(w.grad == 0)


def test_backward_shared_subexpression(rng):
    x = parameter(rng.standard_normal((3, 3)))
    with Tape():
        y = ops.exp(x)
        backward(ops.sum_all(ops.add(y, y)))
    np.testing.assert_allclose(x.grad, 2 * np.exp(x.value))


def test_backward_requires_scalar(rng):
    x = parameter(rng.standard_normal((2, 2)))
    with Tape():
        y = ops.scale(x, 2.0)
        with pytest.raises(BackwardError):
            backward(y)


def test_no_tape_means_no_records(rng):
    x = parameter(rng.standard_normal((2, 2)))
    y = ops.matmul(x, x)
    assert y.is_leaf
    assert not y.requires_grad


def test_tape_release_drops_records(rng):
    x = parameter(rng.standard_normal((2, 2)))
    with Tape() as tape:
        backward(ops.sum_all(ops.relu(x)))
    assert len(tape) == 2
    tape.release()
    assert len(tape) == 0


def test_shape_errors():
    with pytest.raises(ShapeError):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ops.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        ops.add_row(np.ones((2, 3)), np.ones(4))
    with pytest.raises(ShapeError):
        ops.take_rows(np.ones((2, 3)), [2])


def test_empty_tensor_error():
    with pytest.raises(EmptyTensorError):
        ops.sum_all(np.zeros((0, 3)))


def test_grad_check_rejects_single_precision():
    x = parameter(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(GradCheckError):
        grad_check(lambda: ops.sum_all(x), [x])


def test_grad_check_detects_wrong_gradient(rng):
    x = parameter(rng.standard_normal((3, 3)), name='x')
    result = grad_check(lambda: ops.sum_all(ops.multiply(x, x)), [x],
                        analytic_hook=lambda name, grad: grad * 1.5)
    assert not result.passed()


def test_grad_check_fails_scaled_gradient_of_small_quadratic():
    """Tiny inputs give tiny gradients; a wrong gradient must still fail."""
    x = parameter(np.array([[1e-3, 2e-3], [5e-3, 3e-3]]), name='x')
    result = grad_check(lambda: ops.sum_all(ops.multiply(x, x)), [x], max_coords=None,
                        analytic_hook=lambda name, grad: grad * 1.5)
    assert not result.passed()
    assert result.kinks == 0
    assert result.max_rel_error == pytest.approx(1 / 3, rel=1e-3)


def test_grad_check_fails_scaled_gradient_of_curved_objective():
    x = parameter(np.array([1e-3, -2e-3]), name='x')

    def objective():
        return ops.sum_all(ops.subtract(ops.exp(x), x))

    assert grad_check(objective, [x], max_coords=None).passed()
    result = grad_check(objective, [x], max_coords=None, analytic_hook=lambda name, grad: grad * 1.5)
    assert not result.passed()
    assert result.kinks == 0


def test_grad_check_skips_only_coordinates_crossing_a_breakpoint():
    x = parameter(np.array([[5e-6, 1.0]]), name='x')
    weights = constant(np.array([[1.0, 2.0]]))

    def objective():
        return ops.sum_all(ops.multiply(ops.relu(x), weights))

    result = grad_check(objective, [x], h=1e-5, max_coords=None)
    assert result.passed()
    assert result.kinks == 1

    scaled = grad_check(objective, [x], h=1e-5, max_coords=None,
                        analytic_hook=lambda name, grad: grad * 1.5)
    assert not scaled.passed()
    assert scaled.kinks == 1


def test_branch_log_records_piecewise_selections():
    x = constant(np.array([[-1.0, 0.5, 2.0]]))
    with BranchLog() as first:
        ops.relu(x)
        ops.clip(x, -0.5, 1.0)
    assert [op for op, _ in first.masks] == ['relu', 'clip', 'clip']
    np.testing.assert_array_equal(first.masks[0][1], [[False, True, True]])
    with BranchLog() as second:
        ops.relu(constant(np.array([[-1.0, 0.5, -2.0]])))
        ops.clip(x, -0.5, 1.0)
    assert not first.same_branches(second)
    with BranchLog() as third:
        ops.relu(x)
        ops.clip(x, -0.5, 1.0)
    assert first.same_branches(third)


def test_relative_error_floor():
    assert ERROR_FLOOR == 1e-12
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(0.0, 1e-13) == pytest.approx(0.1)
    assert relative_error(0.0, 4e-11) == pytest.approx(1.0)
    assert relative_error(2e-3, 3e-3) == pytest.approx(1 / 3)


def test_sum_of_softmax_has_zero_gradient(rng):
    x = parameter(rng.standard_normal((3, 5)))
    with Tape():
        backward(ops.sum_all(ops.row_softmax(x)))
    np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)


def test_backward_after_zero_grad_is_bit_identical(rng):
    w = parameter(rng.standard_normal((4, 3)))
    v = constant(rng.standard_normal((3, 2)))

    def run():
        w.zero_grad()
        with Tape() as tape:
            backward(ops.sum_all(ops.sigmoid(ops.matmul(w, v))))
        tape.release()
        return w.grad.copy()

    np.testing.assert_array_equal(run(), run())


def test_backward_on_released_tape_is_error(rng):
    x = parameter(rng.standard_normal((2, 2)))
    with Tape() as tape:
        loss = ops.sum_all(ops.exp(x))
        backward(loss)
    tape.release()
    before = x.grad.copy()
    with pytest.raises(BackwardError):
        backward(loss)
    np.testing.assert_array_equal(x.grad, before)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)))
def test_row_softmax_rows_sum_to_one(values):
    y = ops.row_softmax(constant(values)).value
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(y >= 0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-20, 20)), arrays(np.bool_, (4, 4)))
def test_masked_softmax_respects_mask(values, mask):
    y = ops.masked_row_softmax(constant(values), mask).value
    assert np.all(y[~mask] == 0)
    for row, allowed in zip(y, mask):
        expected = 1.0 if allowed.any() else 0.0
        assert abs(row.sum() - expected) < 1e-12
