from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from gmi_tool import diffmath as dm
from gmi_tool.errors import DimensionError, DomainError, NumericalError
from gmi_tool.graph import from_edges, normalized_adjacency


def _check(f, params, limit=1e-6) -> None:
    result = dm.grad_check(f, params)
    assert result.max_relative_error < limit, result


def test_matmul_values_and_shape_error() -> None:
    x = dm.constant(np.arange(9.0).reshape(3, 3))
    identity = dm.constant(np.eye(3))

    np.testing.assert_array_equal(dm.matmul(identity, x).values, x.values)
    assert dm.matmul(dm.constant([[1, 2], [3, 4]]), dm.constant([[1], [1]])).values.tolist() == [[3.0], [7.0]]
    with pytest.raises(DimensionError, match=r"\(2, 2\).*\(3, 3\)"):
        dm.matmul(dm.constant(np.ones((2, 2))), x)


def test_matmul_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(0)
    a = dm.parameter(rng.normal(size=(4, 3)))
    b = dm.parameter(rng.normal(size=(3, 2)))

    _check(lambda: dm.sum_all(dm.mul(dm.matmul(a, b), dm.matmul(a, b))), [a, b])


def test_spmm_matches_dense_product() -> None:
    rng = np.random.default_rng(1)
    s = sp.random(10, 10, density=0.3, random_state=3, format="csr")
    d = dm.constant(rng.normal(size=(10, 4)))

    np.testing.assert_allclose(dm.spmm(s, d).values, s.toarray() @ d.values, atol=1e-12)
    np.testing.assert_array_equal(dm.spmm(sp.identity(10, format="csr"), d).values, d.values)


def test_spmm_two_node_clique() -> None:
    a_hat = normalized_adjacency(from_edges(2, [(0, 1)], np.ones((2, 1))))

    out = dm.spmm(a_hat, dm.constant([[2.0, 0.0], [0.0, 2.0]]))

    np.testing.assert_allclose(out.values, np.ones((2, 2)))


def test_spmm_gradient_flows_into_dense_operand() -> None:
    rng = np.random.default_rng(2)
    s = sp.random(6, 6, density=0.5, random_state=4, format="csr")
    d = dm.parameter(rng.normal(size=(6, 2)))

    _check(lambda: dm.sum_all(dm.softplus(dm.spmm(s, d))), [d])


def test_prelu_definition_and_slope_gradient() -> None:
    slope = dm.parameter([[0.25]])
    assert dm.prelu(dm.constant([[-4.0]]), slope).item() == -1.0
    positive = dm.constant([[0.5, 3.0]])
    np.testing.assert_array_equal(dm.prelu(positive, dm.parameter([[7.0]])).values, positive.values)

    rng = np.random.default_rng(5)
    x = dm.parameter(rng.normal(size=(5, 3)))
    _check(lambda: dm.sum_all(dm.mul(dm.prelu(x, slope), dm.prelu(x, slope))), [x, slope])


def test_elementwise_fixed_points() -> None:
    assert dm.softplus(dm.constant(0.0)).item() == pytest.approx(np.log(2.0), abs=1e-15)
    assert dm.sigmoid(dm.constant(0.0)).item() == 0.5
    assert dm.softplus(dm.constant(50.0)).item() == pytest.approx(50.0, abs=1e-9)
    extreme = dm.constant(np.linspace(-100, 100, 41).reshape(1, -1))
    assert np.all(np.isfinite(dm.softplus(extreme).values))
    assert np.all(np.isfinite(dm.sigmoid(extreme).values))


def test_log_rejects_non_positive_values() -> None:
    with pytest.raises(DomainError):
        dm.log(dm.constant([[1.0, 0.0]]))


def test_non_finite_forward_value_is_an_error() -> None:
    with pytest.raises(NumericalError, match="scale"):
        dm.scale(dm.constant([[1e308]]), 10.0)


@pytest.mark.parametrize(
    "build",
    [
        lambda x: dm.sum_all(dm.sigmoid(x)),
        lambda x: dm.sum_all(dm.softplus(x)),
        lambda x: dm.mean(dm.log(dm.add(dm.mul(x, x), dm.constant([[1.0]])))),
        lambda x: dm.sum_all(dm.mul(dm.mean(x, axis=0), dm.mean(x, axis=0))),
        lambda x: dm.sum_all(dm.mul(dm.mean(x, axis=1), dm.mean(x, axis=1))),
        lambda x: dm.sum_all(dm.softplus(dm.sub(dm.transpose(x), dm.scale(dm.transpose(x), 0.3)))),
        lambda x: dm.sum_all(dm.mul(dm.reshape(x, (3, 4)), dm.reshape(x, (3, 4)))),
        lambda x: dm.sum_all(dm.mul(dm.pair_dot(x, x, np.array([0, 1, 3, 3]), np.array([2, 2, 0, 3])), dm.constant(np.arange(1.0, 5.0).reshape(4, 1)))),
    ],
)
def test_elementwise_and_reduction_gradients(build) -> None:
    x = dm.parameter(np.random.default_rng(7).normal(size=(4, 3)))

    _check(lambda: build(x), [x])


def test_backward_simple_cases() -> None:
    x = dm.parameter(np.zeros((2, 3)))
    with dm.ComputationRecord() as record:
        loss = dm.sum_all(x)
    dm.backward(record, loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    assert len(record) == 0

    x.zero_grad()
    with dm.ComputationRecord() as record:
        loss = dm.mean(dm.sigmoid(x))
    dm.backward(record, loss)
    np.testing.assert_allclose(x.grad, np.full((2, 3), 0.25 / 6))


def test_backward_requires_scalar_loss() -> None:
    x = dm.parameter(np.ones((2, 2)))
    with dm.ComputationRecord() as record:
        out = dm.scale(x, 2.0)
    with pytest.raises(DimensionError):
        dm.backward(record, out)


def test_backward_is_deterministic() -> None:
    rng = np.random.default_rng(8)
    x = dm.parameter(rng.normal(size=(5, 4)))
    w = dm.parameter(rng.normal(size=(4, 2)))
    grads = []
    for _ in range(2):
        x.zero_grad()
        w.zero_grad()
        with dm.ComputationRecord() as record:
            loss = dm.mean(dm.softplus(dm.matmul(x, w)))
        dm.backward(record, loss)
        grads.append((x.grad.copy(), w.grad.copy()))
    assert np.array_equal(grads[0][0], grads[1][0]) and np.array_equal(grads[0][1], grads[1][1])


def test_ops_outside_a_record_are_not_tracked() -> None:
    x = dm.parameter(np.ones((1, 1)))
    out = dm.scale(x, 3.0)
    with dm.ComputationRecord() as record:
        with dm.suspended():
            dm.scale(x, 2.0)
    assert out.record_id is None
    assert len(record) == 0


def test_grad_check_is_exact_for_linear_functions() -> None:
    x = dm.parameter(np.random.default_rng(9).normal(size=(3, 3)))
    coefficients = dm.constant(np.arange(9.0).reshape(3, 3))

    result = dm.grad_check(lambda: dm.sum_all(dm.mul(coefficients, x)), [x])

    assert result.max_relative_error < 1e-8


def test_composite_gcn_layer_gradient(toy) -> None:
    a_hat = normalized_adjacency(toy)
    rng = np.random.default_rng(10)
    w = dm.parameter(rng.normal(size=(toy.n_features, 3)))
    slope = dm.parameter([[0.25]])
    features = dm.constant(toy.features)

    _check(lambda: dm.mean(dm.softplus(dm.prelu(dm.matmul(dm.spmm(a_hat, features), w), slope))), [w, slope], 1e-4)


def test_grad_check_detects_wrong_backward_rule(monkeypatch) -> None:
    x = dm.parameter(np.random.default_rng(11).normal(size=(3, 2)))
    monkeypatch.setattr(dm, "_softplus_backward", lambda values, grad: grad * 0.5)

    result = dm.grad_check(lambda: dm.sum_all(dm.softplus(x)), [x])

    assert result.max_relative_error > 1e-2
