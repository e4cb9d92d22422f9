"""
Installed dendrites of one host layer

Cycle c gives every host neuron i one unit
    D_c[:, i] = f(x . A_c[:, i] + sum_{c' < c} D_{c'}[:, i] * G_c[c', i] + b_c[i])
and the neuron's pre-activation gains sum_c u_c[i] * D_c[:, i].
A, G and b are locked after integration; u trains with the main weights.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.engine import ops
from app.engine.tensor import Tensor
from app.models.schemas import ActivationKind
from app.network.parameters import ParameterGroup


@dataclass(frozen=True)
class DendriteUnit:
    """Read-only view of one neuron's dendrite (installed or candidate)"""
    layer_id: int
    neuron: int
    cycle: int
    input_weights: np.ndarray
    bias: float
    activation: ActivationKind
    frozen: bool = True

    @property
    def param_count(self) -> int:
        return int(self.input_weights.size) + 1


@dataclass
class DendriteCycle:
    index: int
    input_weight: ParameterGroup
    input_bias: ParameterGroup
    output_weight: ParameterGroup
    cascade_weight: Optional[ParameterGroup] = None

    def groups(self) -> List[ParameterGroup]:
        groups = [self.input_weight]
        if self.cascade_weight is not None:
            groups.append(self.cascade_weight)
        return groups + [self.input_bias, self.output_weight]


@dataclass
class DendriteBlock:
    """All dendrites grown on one host layer; one unit per neuron per cycle"""
    layer_id: int
    n_neurons: int
    n_inputs: int
    activation: ActivationKind
    cascade: bool = True
    cycles: List[DendriteCycle] = field(default_factory=list)

    @property
    def cycle_count(self) -> int:
        return len(self.cycles)

    def param_count(self) -> int:
        return sum(g.size for cycle in self.cycles for g in cycle.groups())

    def units(self, neuron: int) -> List[DendriteUnit]:
        units = []
        for cycle in self.cycles:
            weights = cycle.input_weight.values[:, neuron]
            if cycle.cascade_weight is not None:
                weights = np.concatenate([weights, cycle.cascade_weight.values[:, neuron]])
            units.append(DendriteUnit(
                layer_id=self.layer_id,
                neuron=neuron,
                cycle=cycle.index,
                input_weights=weights.copy(),
                bias=float(cycle.input_bias.values[neuron]),
                activation=self.activation,
                frozen=cycle.input_weight.locked,
            ))
        return units

    def dendrite_outputs(self, rows: Tensor) -> List[Tensor]:
        """D_c for every cycle; gradients reach ``rows`` through the frozen weights"""
        outputs: List[Tensor] = []
        for cycle in self.cycles:
            net = ops.matmul(rows, cycle.input_weight.tensor)
            if cycle.cascade_weight is not None:
                for j, previous in enumerate(outputs):
                    gate = Tensor(cycle.cascade_weight.values[j])
                    net = ops.add(net, ops.mul_broadcast(previous, gate))
            net = ops.add_broadcast(net, cycle.input_bias.tensor)
            outputs.append(ops.unary_activation(net, self.activation))
        return outputs

    def contribution(self, rows: Tensor) -> Optional[Tensor]:
        total = None
        for cycle, output in zip(self.cycles, self.dendrite_outputs(rows)):
            term = ops.mul_broadcast(output, cycle.output_weight.tensor)
            total = term if total is None else ops.add(total, term)
        return total

    def output_values(self, rows: np.ndarray) -> np.ndarray:
        """(R, cycles, n) dendrite activations as plain arrays, for cascading candidates"""
        outputs: List[np.ndarray] = []
        for cycle in self.cycles:
            net = rows @ cycle.input_weight.values
            if cycle.cascade_weight is not None:
                for j, previous in enumerate(outputs):
                    net = net + previous * cycle.cascade_weight.values[j]
            net = net + cycle.input_bias.values
            outputs.append(ops.activate(net, self.activation))
        if not outputs:
            return np.zeros((rows.shape[0], 0, self.n_neurons))
        return np.stack(outputs, axis=1)
