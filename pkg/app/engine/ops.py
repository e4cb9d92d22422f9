"""
Differentiable operations on Tensors
Each op computes its value with numpy and hands a backward rule to the tape
"""

from typing import Optional, Tuple, Union

import numpy as np

from app.engine.tensor import Tensor, as_tensor, emit
from app.models.schemas import ActivationKind
from app.utils.exceptions import ConfigurationError, DataError, DimensionError

ActivationLike = Union[ActivationKind, str]


def resolve_activation(kind: ActivationLike) -> ActivationKind:
    try:
        return ActivationKind(kind)
    except ValueError as e:
        raise ConfigurationError(f"unknown activation kind: {kind!r}") from e


# ========== ELEMENTWISE NONLINEARITIES ==========

def activate(x: np.ndarray, kind: ActivationLike) -> np.ndarray:
    kind = resolve_activation(kind)
    if kind == ActivationKind.RELU:
        return np.where(x > 0.0, x, 0.0)
    if kind == ActivationKind.TANH:
        return np.tanh(x)
    # exp(-log(1 + e^-x)) stays finite for large |x|
    return np.exp(-np.logaddexp(0.0, -x))


def activation_derivative(x: np.ndarray, y: np.ndarray, kind: ActivationLike) -> np.ndarray:
    """f'(x) given pre-activation x and output y; relu'(0) is 0"""
    kind = resolve_activation(kind)
    if kind == ActivationKind.RELU:
        return (x > 0.0).astype(np.float64)
    if kind == ActivationKind.TANH:
        return 1.0 - y * y
    return y * (1.0 - y)


# ========== LINEAR ALGEBRA ==========

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def _backward(g):
        return g @ B.T, A.T @ g

    return emit("matmul", (a, b), A @ B, _backward)


def add_broadcast(a: Tensor, b: Tensor) -> Tensor:
    """Add a vector to every row of a matrix (bias addition)"""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 1 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"add_broadcast trailing dims differ: {a.shape} + {b.shape}")

    def _backward(g):
        return g, g.sum(axis=0)

    return emit("add_broadcast", (a, b), a.data + b.data, _backward)


def mul_broadcast(a: Tensor, b: Tensor) -> Tensor:
    """Scale every row of a matrix elementwise by a vector"""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 1 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"mul_broadcast trailing dims differ: {a.shape} * {b.shape}")
    A, B = a.data, b.data

    def _backward(g):
        return g * B, (g * A).sum(axis=0)

    return emit("mul_broadcast", (a, b), A * B, _backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")

    def _backward(g):
        return g, g

    return emit("add", (a, b), a.data + b.data, _backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub shape mismatch: {a.shape} - {b.shape}")

    def _backward(g):
        return g, -g

    return emit("sub", (a, b), a.data - b.data, _backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    A, B = a.data, b.data

    def _backward(g):
        return g * B, g * A

    return emit("mul", (a, b), A * B, _backward)


def scale(a: Tensor, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)

    def _backward(g):
        return (g * factor,)

    return emit("scale", (a,), a.data * factor, _backward)


def sum_all(a: Tensor) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def _backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return emit("sum", (a,), np.asarray(a.data.sum()), _backward)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.size)


def abs_(a: Tensor) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)

    def _backward(g):
        return (g * sign,)

    return emit("abs", (a,), np.abs(a.data), _backward)


def unary_activation(x: Tensor, kind: ActivationLike) -> Tensor:
    kind = resolve_activation(kind)
    x = as_tensor(x)
    X = x.data
    Y = activate(X, kind)

    def _backward(g):
        return (g * activation_derivative(X, Y, kind),)

    return emit(kind.value, (x,), Y, _backward)


# ========== SHAPE OPERATIONS ==========

def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    try:
        result = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {original} to {shape}") from e

    def _backward(g):
        return (g.reshape(original),)

    return emit("reshape", (x,), result, _backward)


def flatten(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return reshape(x, (x.shape[0], -1))


def conv_output_size(size: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - 3) // stride + 1


def im2col(x: Tensor, stride: int, padding: int) -> Tensor:
    """(B, C, H, W) -> (B*Ho*Wo, C*9) rows of 3x3 patches, channel-major"""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"conv2d expects (batch, channels, height, width), got {x.shape}")
    B, C, H, W = x.shape
    Ho, Wo = conv_output_size(H, stride, padding), conv_output_size(W, stride, padding)
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"conv2d input {x.shape} too small for 3x3 kernel")
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    rows = windows.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * 9)
    Hp, Wp = H + 2 * padding, W + 2 * padding

    def _backward(g):
        g = g.reshape(B, Ho, Wo, C, 3, 3)
        dpad = np.zeros((B, C, Hp, Wp))
        for ki in range(3):
            for kj in range(3):
                dpad[:, :, ki:ki + stride * Ho:stride, kj:kj + stride * Wo:stride] += \
                    g[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        return (dpad[:, :, padding:padding + H, padding:padding + W],)

    return emit("im2col", (x,), rows, _backward)


def rows_to_nchw(rows: Tensor, batch: int, height: int, width: int) -> Tensor:
    rows = as_tensor(rows)
    n = rows.shape[1]
    if rows.shape[0] != batch * height * width:
        raise DimensionError(f"cannot fold {rows.shape} rows into ({batch}, {n}, {height}, {width})")
    result = rows.data.reshape(batch, height, width, n).transpose(0, 3, 1, 2)

    def _backward(g):
        return (g.transpose(0, 2, 3, 1).reshape(batch * height * width, n),)

    return emit("rows_to_nchw", (rows,), result, _backward)


def global_avg_pool(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects a 4-d input, got {x.shape}")
    B, C, H, W = x.shape

    def _backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (H * W), (B, C, H, W)).copy(),)

    return emit("global_avg_pool", (x,), x.data.mean(axis=(2, 3)), _backward)


# ========== LOSSES ==========

def validate_one_hot(targets: np.ndarray, shape: Tuple[int, ...]) -> None:
    if targets.shape != shape:
        raise DimensionError(f"targets shape {targets.shape} does not match logits {shape}")
    binary = np.all((targets == 0.0) | (targets == 1.0), axis=1)
    rows_ok = binary & (targets.sum(axis=1) == 1.0)
    if not np.all(rows_ok):
        bad = int(np.argmin(rows_ok))
        raise DataError(f"target row {bad} is not one-hot: {targets[bad].tolist()}")


def softmax_cross_entropy(logits: Tensor, targets) -> Tuple[Tensor, np.ndarray]:
    """Mean cross-entropy and its per-sample logit gradient (softmax - t) / P"""
    logits = as_tensor(logits)
    T = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be (patterns, outputs), got {logits.shape}")
    validate_one_hot(T, logits.shape)
    P = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -(T * log_probs).sum() / P
    grad = (np.exp(log_probs) - T) / P

    def _backward(g):
        return (g * grad,)

    return emit("softmax_cross_entropy", (logits,), np.asarray(loss), _backward), grad


def squared_error(predictions: Tensor, targets) -> Tuple[Tensor, np.ndarray]:
    """Mean over patterns of half the squared error, and its gradient (pred - t) / P"""
    predictions = as_tensor(predictions)
    T = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if T.shape != predictions.shape:
        raise DimensionError(f"targets shape {T.shape} does not match predictions {predictions.shape}")
    P = predictions.shape[0]
    diff = predictions.data - T
    loss = 0.5 * (diff * diff).sum() / P
    grad = diff / P

    def _backward(g):
        return (g * grad,)

    return emit("squared_error", (predictions,), np.asarray(loss), _backward), grad


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def constant(values, requires_grad: bool = False) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def optional_add(a: Tensor, b: Optional[Tensor]) -> Tensor:
    return a if b is None else add(a, b)
