import numpy as np
import pytest

from autodiff import (
    Parameter,
    SegmentIndex,
    activation,
    add,
    add_bias,
    backward,
    concat,
    constant,
    count_flops,
    div_scalar,
    gather_rows,
    l2_norm,
    log_softmax,
    matmul,
    mul,
    reduce,
    reshape,
    scale,
    scale_rows,
    segment_softmax,
    segment_sum,
    total,
)
from conftest import gradients_agree, numerical_gradient
from helpers.errors import ContractError, DimensionError, EmptyGraphError


def _check_gradient(build_loss, *params):
    loss = build_loss()
    backward(loss, params)
    for param in params:
        numeric = numerical_gradient(lambda: build_loss().item(), param)
        assert gradients_agree(param.grad, numeric), param.name


class TestValue:
    def test_data_is_read_only(self):
        value = constant([[1.0, 2.0]])
        with pytest.raises(ValueError):
            value.data[0, 0] = 5.0

    def test_backward_requires_scalar(self):
        x = Parameter(np.ones((2, 2)), 'x')
        with pytest.raises(ContractError):
            backward(scale(x, 2.0))

    def test_unreachable_parameter_gets_zero_gradient(self):
        used = Parameter(np.ones(3), 'used')
        unused = Parameter(np.ones(3), 'unused')
        backward(total(used), [used, unused])
        np.testing.assert_array_equal(used.grad, np.ones(3))
        np.testing.assert_array_equal(unused.grad, np.zeros(3))

    def test_shared_subexpression_accumulates(self):
        x = Parameter(np.array([1.0, 2.0]), 'x')
        loss = total(mul(x, x))
        backward(loss, [x])
        np.testing.assert_allclose(x.grad, 2 * x.data)

    def test_repeated_backward_does_not_accumulate(self):
        x = Parameter(np.array([3.0]), 'x')
        backward(total(scale(x, 2.0)), [x])
        backward(total(scale(x, 2.0)), [x])
        np.testing.assert_array_equal(x.grad, [2.0])


class TestOpGradients:
    def test_matmul_and_bias(self, rng):
        a = Parameter(rng.normal(size=(3, 4)), 'a')
        w = Parameter(rng.normal(size=(4, 2)), 'w')
        b = Parameter(rng.normal(size=2), 'b')
        _check_gradient(lambda: total(activation(add_bias(matmul(a, w), b), 'tanh')), a, w, b)

    def test_elementwise(self, rng):
        a = Parameter(rng.normal(size=(3, 3)), 'a')
        b = Parameter(rng.normal(size=(3, 3)), 'b')
        _check_gradient(lambda: total(mul(add(a, b), scale(b, 0.5))), a, b)

    @pytest.mark.parametrize('kind', ['tanh', 'elu', 'sigmoid', 'relu', 'leaky_relu'])
    def test_activations(self, rng, kind):
        # Keep inputs away from the kink at zero
        data = rng.normal(size=(4, 3))
        data = np.where(np.abs(data) < 0.1, 0.5, data)
        x = Parameter(data, 'x')
        w = constant(rng.normal(size=(4, 3)))
        _check_gradient(lambda: total(mul(activation(x, kind), w)), x)

    def test_scale_rows_and_gather(self, rng):
        x = Parameter(rng.normal(size=(5, 3)), 'x')
        weights = Parameter(rng.normal(size=4), 'weights')
        index = [4, 0, 0, 2]
        _check_gradient(lambda: total(activation(scale_rows(gather_rows(x, index), weights), 'tanh')), x, weights)

    def test_div_scalar_and_norm(self, rng):
        x = Parameter(rng.normal(size=(4, 2)), 'x')
        p = Parameter(rng.normal(size=3), 'p')
        _check_gradient(lambda: total(activation(div_scalar(x, l2_norm(p)), 'tanh')), x, p)

    def test_segment_softmax_and_sum(self, rng):
        scores = Parameter(rng.normal(size=7), 'scores')
        values = Parameter(rng.normal(size=(7, 3)), 'values')
        segments = SegmentIndex(np.array([0, 0, 1, 2, 2, 2, 1]), 4)
        w = constant(rng.normal(size=(4, 3)))

        def loss():
            alpha = segment_softmax(scores, segments)
            return total(mul(segment_sum(scale_rows(values, alpha), segments), w))

        _check_gradient(loss, scores, values)

    def test_reductions_and_concat(self, rng):
        x = Parameter(rng.normal(size=(5, 3)), 'x')
        w = constant(rng.normal(size=6))
        _check_gradient(lambda: total(mul(concat([reduce(x, 'mean'), reduce(x, 'max')]), w)), x)

    def test_log_softmax_reshape(self, rng):
        x = Parameter(rng.normal(size=(1, 3)), 'x')
        _check_gradient(lambda: total(gather_rows(log_softmax(reshape(x, (3,))), [2])), x)


class TestOpSemantics:
    def test_segment_softmax_sums_to_one_per_segment(self, rng):
        ids = np.array([2, 0, 2, 1, 0, 2])
        alpha = segment_softmax(constant(rng.normal(size=6) * 50), SegmentIndex(ids, 3)).data
        np.testing.assert_allclose(np.bincount(ids, weights=alpha), np.ones(3))

    def test_segment_sum_empty_segment_is_zero(self):
        out = segment_sum(constant(np.ones((2, 2))), SegmentIndex(np.array([0, 0]), 3)).data
        np.testing.assert_array_equal(out, [[2.0, 2.0], [0.0, 0.0], [0.0, 0.0]])

    def test_segment_ids_out_of_range(self):
        with pytest.raises(ContractError):
            SegmentIndex(np.array([0, 3]), 3)

    def test_max_gradient_goes_to_first_maximal_row(self):
        x = Parameter(np.array([[1.0], [3.0], [3.0]]), 'x')
        backward(total(reduce(x, 'max')), [x])
        np.testing.assert_array_equal(x.grad, [[0.0], [1.0], [0.0]])

    def test_relu_subgradient_at_zero(self):
        x = Parameter(np.zeros(2), 'x')
        backward(total(activation(x, 'relu')), [x])
        np.testing.assert_array_equal(x.grad, [1.0, 1.0])

    def test_log_softmax_is_stable(self):
        out = log_softmax(constant([1000.0, 0.0])).data
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(0.0)

    def test_zero_norm_has_zero_gradient(self):
        p = Parameter(np.zeros(3), 'p')
        backward(l2_norm(p), [p])
        np.testing.assert_array_equal(p.grad, np.zeros(3))

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))
        with pytest.raises(DimensionError):
            add(constant(np.ones(2)), constant(np.ones(3)))
        with pytest.raises(DimensionError):
            add_bias(constant(np.ones((2, 3))), constant(np.ones(2)))
        with pytest.raises(DimensionError):
            gather_rows(constant(np.ones((2, 3))), [2])

    def test_reduce_over_empty_rows(self):
        with pytest.raises(EmptyGraphError):
            reduce(constant(np.zeros((0, 3))), 'mean')

    def test_unknown_activation(self):
        with pytest.raises(ContractError):
            activation(constant(np.ones(2)), 'softsign')


class TestFlopCounter:
    def test_counts_by_convention(self):
        a = constant(np.ones((3, 4)))
        w = constant(np.ones((4, 5)))
        with count_flops() as counter:
            out = activation(matmul(a, w), 'relu')
            total(out)
        assert counter.by_op == {'matmul': 2 * 3 * 4 * 5, 'relu': 15, 'sum': 15}
        assert counter.total == 120 + 15 + 15

    def test_inactive_outside_context(self):
        with count_flops() as counter:
            pass
        matmul(constant(np.ones((2, 2))), constant(np.ones((2, 2))))
        assert counter.total == 0
