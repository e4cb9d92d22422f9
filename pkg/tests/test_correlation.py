import numpy as np
import pytest

from app.engine import ops
from app.engine.tensor import Tensor
from app.models.schemas import TaskKind
from app.network.graph import build_network, predict
from app.pb.correlation import ErrorMatrix, correlation_score, pool_scores, residual_error
from app.utils.exceptions import DimensionError


def brute_force(V, E):
    P, O = E.shape
    v_mean = sum(V) / P
    total = 0.0
    for o in range(O):
        e_mean = sum(E[p, o] for p in range(P)) / P
        total += abs(sum((V[p] - v_mean) * (E[p, o] - e_mean) for p in range(P)))
    return total


@pytest.mark.parametrize("E, expected", [([[1.0], [-1.0]], 2.0), ([[-1.0], [1.0]], 2.0)])
def test_two_pattern_score(E, expected):
    assert correlation_score(np.array([1.0, -1.0]), np.array(E)) == pytest.approx(expected)


def test_constant_candidate_scores_zero(rng):
    assert correlation_score(np.full(10, 3.0), rng.standard_normal((10, 4))) == 0.0


def test_score_matches_brute_force(rng):
    for _ in range(200):
        P, O = int(rng.integers(2, 20)), int(rng.integers(1, 6))
        V, E = rng.standard_normal(P), rng.standard_normal((P, O))
        assert correlation_score(V, E) == pytest.approx(brute_force(V, E), abs=1e-12)


def test_score_scales_linearly_with_error(rng):
    V, E = rng.standard_normal(12), rng.standard_normal((12, 3))
    assert correlation_score(V, 4.0 * E) == pytest.approx(4.0 * correlation_score(V, E))


def test_pool_scores_agree_with_single_scores(rng):
    values = rng.standard_normal((15, 3, 4))
    E = rng.standard_normal((15, 2))
    scores = pool_scores(values, E)
    assert scores.shape == (3, 4)
    assert scores[1, 2] == pytest.approx(correlation_score(values[:, 1, 2], E))


def test_pattern_count_mismatch():
    with pytest.raises(DimensionError):
        correlation_score(np.ones(3), np.ones((4, 2)))


def test_error_matrix_rows_rescales_to_sub_batch_mean():
    E = ErrorMatrix(np.arange(8, dtype=float).reshape(4, 2))
    np.testing.assert_allclose(E.rows(np.array([1, 3])).values, 2.0 * E.values[[1, 3]])
    np.testing.assert_allclose(E.rows(np.array([1, 3]), rescale=False).values, E.values[[1, 3]])


def test_uniform_logits_residual():
    _, grad = ops.softmax_cross_entropy(Tensor([[0.0, 0.0]]), np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(grad, [[-0.5, 0.5]])


def test_confident_correct_predictions_have_near_zero_residual():
    _, grad = ops.softmax_cross_entropy(Tensor([[40.0, -40.0], [-40.0, 40.0]]), np.eye(2))
    assert np.abs(grad).max() < 1e-12


def test_residual_halves_when_batch_is_duplicated(small_spec, rng):
    model = build_network(small_spec)
    X = rng.standard_normal((6, 2))
    T = ops.one_hot(rng.integers(0, 2, size=6), 2)
    single = residual_error(model, X, T)
    double = residual_error(model, np.concatenate([X, X]), np.concatenate([T, T]))
    np.testing.assert_allclose(double.values[:6], single.values / 2.0)


def test_residual_writes_no_gradients(small_spec, rng):
    model = build_network(small_spec)
    residual_error(model, rng.standard_normal((5, 2)), ops.one_hot(np.zeros(5, dtype=int), 2))
    assert all(g.tensor.grad is None for g in model.groups.values())


def test_regression_residual_is_prediction_minus_target(small_spec, rng):
    model = build_network(small_spec)
    X, T = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    E = residual_error(model, X, T, TaskKind.REGRESSION)
    np.testing.assert_allclose(E.values, (predict(model, X) - T) / 4)
