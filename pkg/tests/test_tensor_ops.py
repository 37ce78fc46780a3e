#!/usr/bin/env python3
"""
Tests for the autodiff core: primitives, backward, ComputeGraph and grad_check.
"""

import numpy as np
import pytest

from vfs_lab import ops
from vfs_lab.errors import ContractError, NumericError, ParameterError, ShapeError
from vfs_lab.tensor import ComputeGraph, Tensor, evaluate_with_gradients, grad_check, no_grad


def _param(rng, *shape, offset=0.0):
    return Tensor(rng.standard_normal(shape) + offset, requires_grad=True, dtype="float64")


def _away_from_zero(rng, *shape):
    """Values with |x| >= 0.2 so relu kinks stay out of the finite-difference stencil."""
    values = rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(values, requires_grad=True, dtype="float64")


def test_polynomial_value_and_gradient():
    graph = ComputeGraph(lambda x: ops.sum(ops.mul(x, x)), input_shapes=[(2,)])
    value, grads = evaluate_with_gradients(graph, [Tensor([1.0, 2.0], requires_grad=True)])
    assert value.item() == 5.0
    np.testing.assert_array_equal(grads[0].data, [2.0, 4.0])


def test_stop_gradient_gives_zero_gradient():
    graph = ComputeGraph(lambda x: ops.sum(ops.stop_gradient(x)))
    value, grads = evaluate_with_gradients(graph, [Tensor([1.0, -3.0, 2.0], requires_grad=True)])
    assert value.item() == 0.0
    np.testing.assert_array_equal(grads[0].data, np.zeros(3))


def test_unit_norm_identity_has_zero_gradient():
    rng = np.random.default_rng(0)
    graph = ComputeGraph(lambda x: ops.sum(ops.mul(ops.l2_normalize(x), ops.l2_normalize(x))))
    value, grads = evaluate_with_gradients(graph, [_param(rng, 5)])
    assert value.item() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(grads[0].data, np.zeros(5), atol=1e-12)


def test_stop_gradient_branch_equals_constant():
    """Upstream gradients with a stopped branch equal those with the branch as a constant."""
    rng = np.random.default_rng(1)
    x = _param(rng, 4)
    frozen = x.data.copy()

    stopped = ComputeGraph(lambda v: ops.sum(ops.mul(v, ops.stop_gradient(ops.scale(v, 3.0)))))
    constant = ComputeGraph(lambda v: ops.sum(ops.mul(v, Tensor(3.0 * frozen))))
    _, g1 = evaluate_with_gradients(stopped, [x])
    _, g2 = evaluate_with_gradients(constant, [x])
    np.testing.assert_array_equal(g1[0].data, g2[0].data)


def test_shared_subexpression_accumulates():
    x = Tensor([0.5, -2.0], requires_grad=True)
    y = ops.sum(ops.add(ops.mul(x, x), x))
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_l2_normalize_examples():
    np.testing.assert_allclose(ops.l2_normalize(Tensor([[3.0, 4.0]]), axis=1).data, [[0.6, 0.8]])
    unit = np.array([[0.0, 1.0, 0.0]])
    np.testing.assert_array_equal(ops.l2_normalize(Tensor(unit), axis=1).data, unit)
    tiny = ops.l2_normalize(Tensor([[1e-30, 0.0]]), axis=1, eps=1e-12).data
    assert np.all(np.isfinite(tiny))
    assert np.linalg.norm(tiny) <= 1.0


def test_primitive_examples():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((2, 3, 5, 5)))
    identity = np.zeros((3, 3, 1, 1))
    identity[np.arange(3), np.arange(3)] = 1.0
    np.testing.assert_array_equal(ops.conv2d(x, Tensor(identity)).data, x.data)

    np.testing.assert_allclose(ops.softmax(Tensor(np.full((1, 4), 2.5)), axis=1).data, np.full((1, 4), 0.25))

    v = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    out = ops.relu(ops.neg(v))
    np.testing.assert_array_equal(out.data, np.zeros(3))
    ops.sum(out).backward()
    np.testing.assert_array_equal(v.grad, np.zeros(3))


def test_conv2d_matches_direct_loops():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, pad=1).data

    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = (7 + 2 - 3) // 2 + 1, (6 + 2 - 3) // 2 + 1
    expected = np.zeros((2, 4, ho, wo))
    for n in range(2):
        for o in range(4):
            for i in range(ho):
                for j in range(wo):
                    patch = padded[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    expected[n, o, i, j] = np.sum(patch * w[o]) + b[o]
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


def test_shape_errors():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))
    with pytest.raises(ShapeError):
        ops.reshape(Tensor(np.ones(6)), (4, 2))
    # Scalar operands are the one broadcast.
    np.testing.assert_array_equal(ops.add(Tensor(np.ones((2, 2))), 1.0).data, np.full((2, 2), 2.0))


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        ops.scale(x, 2.0).backward()


def test_graph_input_and_output_contracts():
    graph = ComputeGraph(lambda x: ops.sum(x), input_shapes=[(3,)])
    with pytest.raises(ShapeError):
        evaluate_with_gradients(graph, [Tensor(np.ones(4), requires_grad=True)])
    vector = ComputeGraph(lambda x: ops.scale(x, 2.0))
    with pytest.raises(ContractError):
        evaluate_with_gradients(vector, [Tensor(np.ones(3), requires_grad=True)])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.sum(ops.mul(x, x))
    assert not y.requires_grad
    assert y.is_leaf


def test_constants_get_no_gradient():
    graph = ComputeGraph(lambda a, b: ops.sum(ops.mul(a, b)))
    _, grads = evaluate_with_gradients(graph, [Tensor([1.0, 2.0], requires_grad=True), np.array([3.0, 4.0])])
    np.testing.assert_array_equal(grads[0].data, [3.0, 4.0])
    assert grads[1] is None


def test_forward_is_deterministic():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((5, 3, 3, 3))
    first = ops.conv2d(Tensor(x), Tensor(w), stride=2, pad=1).data
    second = ops.conv2d(Tensor(x), Tensor(w), stride=2, pad=1).data
    assert first.tobytes() == second.tobytes()


def test_grad_check_contracts():
    graph = ComputeGraph(lambda x: ops.sum(x))
    with pytest.raises(ContractError):
        grad_check(graph, [Tensor(np.ones(2), requires_grad=True, dtype="float32")])
    with pytest.raises(ParameterError):
        grad_check(graph, [Tensor(np.ones(2), requires_grad=True)], eps=1e-2)
    with pytest.raises(NumericError):
        grad_check(graph, [Tensor(np.array([1.0, np.nan]), requires_grad=True)])


def test_grad_check_linear_map_is_exact():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((4, 3))
    graph = ComputeGraph(lambda x: ops.sum(ops.matmul(x, Tensor(w))))
    assert grad_check(graph, [_param(rng, 2, 4)]) <= 1e-8


# One graph per primitive; each is checked on 100 random draws.
def _mlp(rng):
    x, w, b = _param(rng, 3, 4), _param(rng, 4, 5), _param(rng, 5)
    mix = rng.standard_normal((3, 5))
    fn = lambda x, w, b: ops.sum(ops.mul(ops.add_bias(ops.matmul(x, w), b), mix))
    return fn, [x, w, b]


def _relu(rng):
    x = _away_from_zero(rng, 3, 4)
    mix = rng.standard_normal((3, 4))
    return (lambda x: ops.sum(ops.mul(ops.relu(x), mix))), [x]


def _conv(rng):
    x, w, b = _param(rng, 2, 2, 5, 5), _param(rng, 3, 2, 3, 3), _param(rng, 3)
    mix = rng.standard_normal((2, 3, 3, 3))
    return (lambda x, w, b: ops.sum(ops.mul(ops.conv2d(x, w, b, stride=2, pad=1), mix))), [x, w, b]


def _pool_softmax(rng):
    x = _param(rng, 2, 3, 4, 4)
    mix = rng.standard_normal((2, 3))
    return (lambda x: ops.sum(ops.mul(ops.softmax(ops.mean_pool(x), axis=1), mix))), [x]


def _log_softmax(rng):
    x = _param(rng, 3, 5)
    mix = rng.standard_normal((3, 5))
    return (lambda x: ops.sum(ops.mul(ops.log_softmax(x, axis=1), mix))), [x]


def _normalize(rng):
    x = _param(rng, 4, 6)
    mix = rng.standard_normal((4, 6))
    return (lambda x: ops.sum(ops.mul(ops.l2_normalize(x, axis=1), mix))), [x]


def _batch_norm(rng):
    x, g, b = _param(rng, 6, 3), _param(rng, 3, offset=1.0), _param(rng, 3)
    mix = rng.standard_normal((6, 3))
    return (lambda x, g, b: ops.sum(ops.mul(ops.batch_norm(x, g, b), mix))), [x, g, b]


def _batch_norm_spatial(rng):
    x, g, b = _param(rng, 2, 3, 3, 3), _param(rng, 3, offset=1.0), _param(rng, 3)
    mix = rng.standard_normal((2, 3, 3, 3))
    return (lambda x, g, b: ops.sum(ops.mul(ops.batch_norm(x, g, b), mix))), [x, g, b]


def _gather(rng):
    x = _param(rng, 4, 3)
    mix = rng.standard_normal((5, 2))
    rows = [0, 2, 2, 3, 1]
    fn = lambda x: ops.sum(ops.mul(ops.narrow(ops.take_rows(ops.concat([x, ops.scale(x, 2.0)], axis=1), rows),
                                              1, 1, 3), mix))
    return fn, [x]


def _reshape_transpose(rng):
    x = _param(rng, 2, 6)
    mix = rng.standard_normal((4, 3))
    fn = lambda x: ops.sum(ops.mul(ops.transpose(ops.reshape(x, (3, 4))), mix))
    return fn, [x]


def _reductions(rng):
    x = _param(rng, 3, 4)
    return (lambda x: ops.sum(ops.mul(ops.mean(x, axis=0), ops.sum(x, axis=0)))), [x]


@pytest.mark.parametrize("build", [_mlp, _relu, _conv, _pool_softmax, _log_softmax, _normalize,
                                   _batch_norm, _batch_norm_spatial, _gather, _reshape_transpose, _reductions])
def test_primitive_gradients_match_finite_differences(build):
    for trial in range(100):
        rng = np.random.default_rng(100 + trial)
        fn, inputs = build(rng)
        assert grad_check(ComputeGraph(fn), inputs) <= 1e-4
