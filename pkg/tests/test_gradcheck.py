from dataclasses import replace

import numpy as np
import pytest

from app.engine import ops
from app.engine.gradcheck import grad_check, numerical_gradient, relative_error
from app.engine.seeding import make_rng
from app.engine.tensor import Tensor, no_grad
from app.models.schemas import ActivationKind, GroupSelector, PBConfig
from app.network.graph import ForwardTrace, build_network, forward, set_trainable
from app.pb.candidates import candidate_gradients, candidate_inputs, candidate_objective, spawn_candidates
from app.pb.correlation import residual_error

TOLERANCE = 1e-4


def test_numerical_gradient_of_quadratic():
    grad = numerical_gradient(lambda v: float((v ** 2).sum()), np.array([1.0, -2.0, 0.5]))
    np.testing.assert_allclose(grad, [2.0, -4.0, 1.0], atol=1e-8)


def test_relative_error_mask():
    assert relative_error(np.array([1.0, 5.0]), np.array([1.0, 0.0]), mask=np.array([True, False])) == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_op_gradients_match_central_differences(seed):
    rng = make_rng(seed)
    a = rng.standard_normal((3, 4))
    w = Tensor(rng.standard_normal((4, 5)))
    v = Tensor(rng.standard_normal(4))
    targets = ops.one_hot(rng.integers(0, 4, size=3), 4)
    image = rng.standard_normal((2, 2, 5, 5))

    checks = [
        (lambda x: ops.sum_all(ops.matmul(x, w)), a, False),
        (lambda x: ops.sum_all(ops.mul_broadcast(ops.add_broadcast(x, v), v)), a, False),
        (lambda x: ops.sum_all(ops.mul(x, x)), a, False),
        (lambda x: ops.sum_all(ops.unary_activation(x, ActivationKind.TANH)), a, False),
        (lambda x: ops.sum_all(ops.unary_activation(x, ActivationKind.SIGMOID)), a, False),
        (lambda x: ops.sum_all(ops.mul(ops.unary_activation(x, ActivationKind.RELU), ops.constant(a))), a, True),
        (lambda x: ops.softmax_cross_entropy(x, targets)[0], a, False),
        (lambda x: ops.squared_error(x, targets)[0], a, False),
        (lambda x: ops.sum_all(ops.mul(ops.im2col(x, 2, 1), ops.im2col(x, 2, 1))), image, False),
        (lambda x: ops.sum_all(ops.scale(ops.global_avg_pool(x), 2.0)), image, False),
        (lambda x: ops.sum_all(ops.mul(ops.flatten(x), ops.flatten(x))), image, False),
    ]
    for f, x, kinks in checks:
        assert grad_check(f, Tensor(x), skip_kinks=kinks) < TOLERANCE


@pytest.mark.parametrize("seed", range(5))
def test_candidate_score_gradient(spirals, small_spec, seed):
    model = build_network(small_spec)
    set_trainable(model, GroupSelector.MAIN, False)
    X, T = spirals.X[spirals.train], spirals.targets(spirals.train)
    E = residual_error(model, X, T)
    trace = ForwardTrace()
    with no_grad():
        forward(model, X, trace)
    pool = spawn_candidates(model, 0, PBConfig(pool_size=2), seed)
    inputs = candidate_inputs(model, 0, trace)
    d_input, _, d_bias, _ = candidate_gradients(pool, inputs, E)

    def by_weights(weights):
        return float(candidate_objective(replace(pool, input_weight=weights), inputs, E).scores.sum())

    def by_bias(bias):
        return float(candidate_objective(replace(pool, bias=bias), inputs, E).scores.sum())

    assert relative_error(d_input, numerical_gradient(by_weights, pool.input_weight)) < TOLERANCE
    assert relative_error(d_bias, numerical_gradient(by_bias, pool.bias)) < TOLERANCE
