"""
Residual error of the frozen network and the candidate correlation score

    S = sum_o | sum_p (V_p - mean V)(E[p, o] - mean E_o) |
"""

from dataclasses import dataclass

import numpy as np

from app.engine import ops
from app.engine.tensor import no_grad
from app.models.schemas import TaskKind
from app.network.graph import ModelGraph, forward
from app.utils.exceptions import DimensionError


@dataclass(frozen=True)
class ErrorMatrix:
    """E[p, o]: derivative of the mean task loss w.r.t. output o on pattern p"""
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DimensionError(f"error matrix must be 2-d, got shape {self.values.shape}")

    @property
    def patterns(self) -> int:
        return self.values.shape[0]

    @property
    def outputs(self) -> int:
        return self.values.shape[1]

    @property
    def means(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @property
    def centered(self) -> np.ndarray:
        return self.values - self.means

    def rows(self, index: np.ndarray, rescale: bool = True) -> "ErrorMatrix":
        """Error of a sub-batch; rescaled so it is the gradient of the sub-batch mean loss"""
        factor = self.patterns / len(index) if rescale else 1.0
        return ErrorMatrix(self.values[index] * factor)


def task_loss(logits, targets: np.ndarray, task: TaskKind = TaskKind.CLASSIFICATION):
    if TaskKind(task) == TaskKind.REGRESSION:
        return ops.squared_error(logits, targets)
    return ops.softmax_cross_entropy(logits, targets)


def residual_error(
    model: ModelGraph,
    batch: np.ndarray,
    targets: np.ndarray,
    task: TaskKind = TaskKind.CLASSIFICATION,
) -> ErrorMatrix:
    """Per-sample logit gradient of the task loss; writes no parameter gradients"""
    with no_grad():
        logits = forward(model, batch)
        _, grad = task_loss(logits, targets, task)
    return ErrorMatrix(np.array(grad))


def _error_values(E) -> np.ndarray:
    return E.values if isinstance(E, ErrorMatrix) else np.asarray(E, dtype=np.float64)


def correlation_score(V: np.ndarray, E) -> float:
    V = np.asarray(V, dtype=np.float64).reshape(-1)
    values = _error_values(E)
    if values.ndim == 1:
        values = values[:, None]
    if V.shape[0] != values.shape[0]:
        raise DimensionError(f"candidate output has {V.shape[0]} patterns, error matrix has {values.shape[0]}")
    covariance = (V - V.mean()) @ (values - values.mean(axis=0))
    return float(np.abs(covariance).sum())


def pool_covariance(values: np.ndarray, E) -> np.ndarray:
    """Centered covariance of every candidate (P, K, n) with every error column -> (K, n, O)"""
    E = _error_values(E)
    if values.shape[0] != E.shape[0]:
        raise DimensionError(f"candidate outputs have {values.shape[0]} patterns, error matrix has {E.shape[0]}")
    centered = values - values.mean(axis=0)
    return np.einsum("pkn,po->kno", centered, E - E.mean(axis=0))


def pool_scores(values: np.ndarray, E) -> np.ndarray:
    return np.abs(pool_covariance(values, E)).sum(axis=-1)
