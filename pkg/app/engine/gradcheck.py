"""
Finite-difference oracle for analytic gradients
"""

from typing import Callable, Optional

import numpy as np

from app.engine.tensor import Tape, Tensor, backward, no_grad


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = f(x)
        flat[i] = original - h
        minus = f(x)
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """max_i |a - n| / max(1, |a|, |n|) over the coordinates selected by mask"""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    err = np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    if mask is not None:
        err = err[np.asarray(mask).reshape(-1)]
    return float(err.max()) if err.size else 0.0


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    skip_kinks: bool = False,
) -> float:
    """
    Compare the tape gradient of a scalar function against central differences

    With ``skip_kinks`` coordinates with |x| < 10h are ignored, since relu is
    not differentiable at 0 and its derivative there is defined as 0.
    """
    leaf = Tensor(x.data, requires_grad=True)
    with Tape():
        out = f(leaf)
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros(x.shape)

    def _value(values: np.ndarray) -> float:
        with no_grad():
            return f(Tensor(values)).item()

    numeric = numerical_gradient(_value, x.data, h)
    mask = np.abs(x.data) >= 10.0 * h if skip_kinks else None
    return relative_error(analytic, numeric, mask)
