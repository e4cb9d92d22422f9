"""
Parameter groups: named tensors with a role and a freeze flag
"""

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from app.engine.tensor import Tensor


class GroupRole(str, Enum):
    """Enum for the role a parameter group plays in its layer"""
    WEIGHT = "weight"
    BIAS = "bias"
    DENDRITE_INPUT = "dendrite_input"
    DENDRITE_OUTPUT = "dendrite_output"


MAIN_ROLES = (GroupRole.WEIGHT, GroupRole.BIAS, GroupRole.DENDRITE_OUTPUT)
DENDRITE_ROLES = (GroupRole.DENDRITE_INPUT, GroupRole.DENDRITE_OUTPUT)


@dataclass
class ParameterGroup:
    """
    One tensor of a layer

    Tensors are immutable, so an update swaps in a new Tensor. ``locked``
    groups (installed dendrite inputs) never become trainable again.
    """
    name: str
    layer_id: int
    role: GroupRole
    tensor: Tensor
    trainable: bool = True
    locked: bool = False

    @classmethod
    def create(cls, name: str, layer_id: int, role: GroupRole, values: np.ndarray,
               trainable: bool = True, locked: bool = False) -> "ParameterGroup":
        trainable = trainable and not locked
        return cls(name, layer_id, role, Tensor(values, requires_grad=trainable), trainable, locked)

    @property
    def values(self) -> np.ndarray:
        return self.tensor.data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.tensor.shape

    @property
    def size(self) -> int:
        return self.tensor.size

    def set_trainable(self, flag: bool) -> bool:
        """Apply a freeze flag; returns False when the group is locked and stays frozen"""
        if flag and self.locked:
            return False
        self.trainable = bool(flag)
        self.tensor.requires_grad = self.trainable
        if not self.trainable:
            self.tensor.grad = None
        return True

    def assign(self, values: np.ndarray) -> None:
        self.tensor = Tensor(values, requires_grad=self.trainable)
