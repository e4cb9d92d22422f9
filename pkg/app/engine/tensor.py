"""
Dense float64 tensors with reverse-mode automatic differentiation

Operations executed inside a ``with Tape():`` block are recorded in creation
order; ``backward`` replays the tape in reverse and accumulates gradients
into every reachable leaf that requires them. Outside a tape nothing is
recorded, which is how evaluation runs.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.utils.config import config
from app.utils.exceptions import NumericalError, UsageError

logger = logging.getLogger(__name__)

_local = threading.local()
_debug_validation = config.DEBUG

BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def set_debug_validation(enabled: bool) -> None:
    """Toggle NaN/Inf checks on every op output"""
    global _debug_validation
    _debug_validation = bool(enabled)


class Tensor:
    """Immutable value buffer plus an optional gradient buffer"""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        array = np.array(data, dtype=np.float64)
        array.flags.writeable = False
        self.data: np.ndarray = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt an op result without copying it"""
        out = cls.__new__(cls)
        array = np.ascontiguousarray(array, dtype=np.float64)
        array.flags.writeable = False
        out.data = array
        out.requires_grad = requires_grad
        out.grad = None
        out._tape = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeEntry:
    """One recorded operation"""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Tape:
    """Ordered record of differentiable operations"""

    def __init__(self):
        self.entries: List[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward: BackwardRule) -> None:
        self.entries.append(TapeEntry(op, inputs, output, backward))
        output._tape = self


class no_grad:
    """Suspend recording, e.g. to evaluate a model inside a training step"""

    def __enter__(self) -> None:
        _stack().append(None)

    def __exit__(self, exc_type, exc, tb) -> None:
        _stack().pop()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def emit(op: str, inputs: Tuple[Tensor, ...], result: np.ndarray, backward: BackwardRule) -> Tensor:
    """Wrap an op result and record it when a tape is active and any input needs grad"""
    if _debug_validation and not np.all(np.isfinite(result)):
        raise NumericalError(f"non-finite value produced by {op}")
    tape = active_tape()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(result, requires_grad=tracked)
    if tracked:
        tape.record(op, inputs, out, backward)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from a scalar loss"""
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise UsageError("loss was not recorded on a tape (no trainable input or no active Tape)")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(entry.output) for entry in tape.entries}
    leaves: Dict[int, Tensor] = {}

    for entry in reversed(tape.entries):
        upstream = grads.pop(id(entry.output), None)
        if upstream is None:
            continue
        input_grads = entry.backward(upstream)
        for tensor, g in zip(entry.inputs, input_grads):
            if g is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = np.asarray(g, dtype=np.float64)
            if key not in produced:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        g = grads[key].reshape(tensor.shape)
        tensor.grad = g if tensor.grad is None else tensor.grad + g
