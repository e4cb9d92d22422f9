"""
ModelGraph: instantiated parameters, forward pass, counting and freezing
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from app.engine import ops
from app.engine.seeding import derive_seed, make_rng
from app.engine.tensor import Tensor, as_tensor
from app.models.schemas import GroupSelector, LayerKind, NetworkSpec
from app.network.builder import ResolvedLayer, hidden_layer_ids, resolve_layers
from app.network.parameters import DENDRITE_ROLES, MAIN_ROLES, GroupRole, ParameterGroup
from app.pb.dendrites import DendriteBlock
from app.utils.exceptions import DimensionError, UsageError

logger = logging.getLogger(__name__)

SELECTOR_ROLES = {
    GroupSelector.MAIN: MAIN_ROLES,
    GroupSelector.DENDRITE_INPUT: (GroupRole.DENDRITE_INPUT,),
    GroupSelector.DENDRITE_OUTPUT: (GroupRole.DENDRITE_OUTPUT,),
}


@dataclass
class ForwardTrace:
    """Host-layer inputs captured during a forward pass"""
    layer_inputs: Dict[int, np.ndarray] = field(default_factory=dict)
    rows_per_sample: Dict[int, int] = field(default_factory=dict)


@dataclass
class ModelGraph:
    spec: NetworkSpec
    layers: List[ResolvedLayer]
    groups: Dict[str, ParameterGroup] = field(default_factory=dict)
    dendrites: Dict[int, DendriteBlock] = field(default_factory=dict)

    def register(self, group: ParameterGroup) -> None:
        if group.name in self.groups:
            raise UsageError(f"parameter group {group.name} already registered")
        self.groups[group.name] = group

    def param(self, name: str) -> Tensor:
        return self.groups[name].tensor

    def layer(self, layer_id: int) -> ResolvedLayer:
        return self.layers[layer_id]

    @property
    def input_shape(self):
        return tuple(self.spec.input_shape)

    @property
    def hidden_layers(self) -> List[int]:
        return hidden_layer_ids(self.layers)

    def select(self, selector: GroupSelector) -> List[ParameterGroup]:
        roles = SELECTOR_ROLES[GroupSelector(selector)]
        return [g for g in self.groups.values() if g.role in roles]

    @property
    def main_trainable(self) -> bool:
        weights = [g for g in self.groups.values() if g.role == GroupRole.WEIGHT]
        return any(g.trainable for g in weights)

    def digest(self, selector: Optional[GroupSelector] = None) -> str:
        """sha256 over the raw bytes of the selected groups, in registration order"""
        groups = self.groups.values() if selector is None else self.select(selector)
        h = hashlib.sha256()
        for g in groups:
            h.update(g.name.encode("utf-8"))
            h.update(np.ascontiguousarray(g.values).tobytes())
        return h.hexdigest()

    def zero_grad(self) -> None:
        for g in self.groups.values():
            g.tensor.grad = None


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_network(spec: NetworkSpec) -> ModelGraph:
    """Instantiate parameters: Glorot-uniform weights, zero biases, one stream per layer"""
    layers = resolve_layers(spec)
    model = ModelGraph(spec=spec, layers=layers)
    for layer in layers:
        if not layer.is_parametric:
            continue
        rng = make_rng(derive_seed(spec.seed, "init", layer.index))
        if layer.kind == LayerKind.CONV2D:
            fan_in, fan_out = 9 * layer.in_features, 9 * layer.out_features
        else:
            fan_in, fan_out = layer.in_features, layer.out_features
        weight = glorot_uniform(rng, layer.weight_shape, fan_in, fan_out)
        model.register(ParameterGroup.create(f"layer{layer.index}.weight", layer.index, GroupRole.WEIGHT, weight))
        model.register(ParameterGroup.create(f"layer{layer.index}.bias", layer.index, GroupRole.BIAS,
                                             np.zeros(layer.out_features)))
    logger.debug(f"Built network with {count_params(model, False)} parameters (m={spec.width_multiplier})")
    return model


def _prepare_input(model: ModelGraph, x) -> Tensor:
    x = as_tensor(x)
    expected = model.input_shape
    if x.shape[1:] == expected:
        return x
    if x.data.ndim == 2 and x.shape[1] == int(math.prod(expected)):
        return ops.reshape(x, (x.shape[0],) + expected)
    raise DimensionError(f"input shape {x.shape} does not match network input {list(expected)}")


def forward(model: ModelGraph, x, trace: Optional[ForwardTrace] = None) -> Tensor:
    """Apply the layers in order; dendrites add to their host's pre-activation"""
    h = _prepare_input(model, x)
    batch = h.shape[0]
    for layer in model.layers:
        if layer.kind == LayerKind.FULLY_CONNECTED:
            if trace is not None:
                trace.layer_inputs[layer.index] = h.data
                trace.rows_per_sample[layer.index] = 1
            h = _host(model, layer, h)
        elif layer.kind == LayerKind.CONV2D:
            height, width = layer.out_shape[1], layer.out_shape[2]
            rows = ops.im2col(h, layer.stride, layer.padding)
            if trace is not None:
                trace.layer_inputs[layer.index] = rows.data
                trace.rows_per_sample[layer.index] = height * width
            h = ops.rows_to_nchw(_host(model, layer, rows), batch, height, width)
        elif layer.kind == LayerKind.ACTIVATION:
            h = ops.unary_activation(h, layer.activation)
        elif layer.kind == LayerKind.FLATTEN:
            h = ops.flatten(h)
        else:
            h = ops.global_avg_pool(h)
    return h


def _host(model: ModelGraph, layer: ResolvedLayer, rows: Tensor) -> Tensor:
    pre = ops.add_broadcast(
        ops.matmul(rows, model.param(f"layer{layer.index}.weight")),
        model.param(f"layer{layer.index}.bias"),
    )
    block = model.dendrites.get(layer.index)
    if block is not None:
        pre = ops.optional_add(pre, block.contribution(rows))
    return pre


def predict(model: ModelGraph, x) -> np.ndarray:
    return forward(model, x).data


def count_params(model: ModelGraph, include_dendrites: bool = True) -> int:
    total = 0
    for g in model.groups.values():
        if g.role in DENDRITE_ROLES and not include_dendrites:
            continue
        total += g.size
    return total


def set_trainable(model: ModelGraph, group_selector: GroupSelector, flag: bool) -> None:
    """Freeze or unfreeze every group matched by the selector; locked groups stay frozen"""
    selector = GroupSelector(group_selector)
    skipped = 0
    for group in model.select(selector):
        if not group.set_trainable(flag):
            skipped += 1
    if skipped:
        logger.debug(f"{skipped} locked {selector.value} groups kept frozen")


def iter_trainable(model: ModelGraph) -> Iterable[ParameterGroup]:
    return (g for g in model.groups.values() if g.trainable)
