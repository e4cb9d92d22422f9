"""
Minibatch gradient descent and evaluation loops
"""

import logging
from dataclasses import dataclass

import numpy as np

from app.engine.tensor import Tape, backward, no_grad
from app.models.schemas import TaskKind
from app.network.graph import ModelGraph, forward, iter_trainable
from app.pb.correlation import task_loss
from app.services.dataset_service import Dataset

logger = logging.getLogger(__name__)

EVAL_CHUNK = 1024


@dataclass(frozen=True)
class Metrics:
    loss: float
    accuracy: float


def sgd_step(model: ModelGraph, lr: float) -> int:
    """values -= lr * grad on every trainable group that received a gradient"""
    updated = 0
    for group in iter_trainable(model):
        grad = group.tensor.grad
        if grad is None:
            continue
        group.assign(group.values - lr * grad)
        updated += 1
    return updated


def evaluate(model: ModelGraph, data: Dataset, index: np.ndarray,
             task: TaskKind = TaskKind.CLASSIFICATION) -> Metrics:
    """Mean task loss and argmax accuracy on a split; no tape, no parameter change"""
    if index.size == 0:
        return Metrics(0.0, 0.0)
    total_loss, correct = 0.0, 0
    with no_grad():
        for start in range(0, index.size, EVAL_CHUNK):
            chunk = index[start:start + EVAL_CHUNK]
            logits = forward(model, data.X[chunk])
            loss, _ = task_loss(logits, data.targets(chunk), task)
            total_loss += loss.item() * chunk.size
            correct += int(np.sum(np.argmax(logits.data, axis=1) == data.Y[chunk]))
    return Metrics(total_loss / index.size, correct / index.size)


def train_epoch(model: ModelGraph, data: Dataset, lr: float, batch_size: int,
                rng: np.random.Generator, task: TaskKind = TaskKind.CLASSIFICATION) -> float:
    """One shuffled pass over the training split; returns the sample-weighted mean batch loss"""
    order = data.train[rng.permutation(data.train.size)]
    total = 0.0
    for start in range(0, order.size, batch_size):
        batch = order[start:start + batch_size]
        model.zero_grad()
        with Tape():
            loss, _ = task_loss(forward(model, data.X[batch]), data.targets(batch), task)
        backward(loss)
        sgd_step(model, lr)
        total += loss.item() * batch.size
    model.zero_grad()
    return total / max(order.size, 1)
