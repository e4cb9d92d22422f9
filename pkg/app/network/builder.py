"""
Resolve a NetworkSpec into concrete layer shapes and parameter counts

Hidden widths are scaled by the width multiplier; the input shape and the
output width of the last parametric layer never are.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from app.engine.ops import conv_output_size
from app.models.schemas import ActivationKind, LayerKind, NetworkSpec, PBConfig
from app.utils.exceptions import ConfigurationError, SpecError


@dataclass(frozen=True)
class ResolvedLayer:
    """A layer with every dimension filled in after width scaling"""
    index: int
    kind: LayerKind
    in_shape: Tuple[int, ...]
    out_shape: Tuple[int, ...]
    in_features: int = 0
    out_features: int = 0
    stride: int = 1
    padding: int = 0
    activation: Optional[ActivationKind] = None
    hidden: bool = False

    @property
    def is_parametric(self) -> bool:
        return self.kind in (LayerKind.FULLY_CONNECTED, LayerKind.CONV2D)

    @property
    def presynaptic_inputs(self) -> int:
        """d: inputs each neuron sees (a 3x3 patch per channel for conv2d)"""
        return 9 * self.in_features if self.kind == LayerKind.CONV2D else self.in_features

    @property
    def weight_shape(self) -> Tuple[int, int]:
        return (self.presynaptic_inputs, self.out_features)

    @property
    def param_count(self) -> int:
        if not self.is_parametric:
            return 0
        return self.presynaptic_inputs * self.out_features + self.out_features


def scale_width(dim: int, multiplier: float) -> int:
    """Round half-up, never below one unit"""
    return max(1, int(math.floor(dim * multiplier + 0.5)))


def resolve_layers(spec: NetworkSpec, multiplier: Optional[float] = None) -> List[ResolvedLayer]:
    """Validate the unscaled chain, then resolve every layer at the given width"""
    _walk(spec, 1.0, check_declared=True)
    m = spec.width_multiplier if multiplier is None else multiplier
    return _walk(spec, m, check_declared=False)


def _walk(spec: NetworkSpec, multiplier: float, check_declared: bool) -> List[ResolvedLayer]:
    parametric = [i for i, layer in enumerate(spec.layers) if layer.is_parametric]
    if not parametric:
        raise ConfigurationError("network has no fully_connected or conv2d layer")
    output_index = parametric[-1]

    shape: Tuple[int, ...] = tuple(spec.input_shape)
    resolved: List[ResolvedLayer] = []
    for i, layer in enumerate(spec.layers):
        if layer.kind == LayerKind.FULLY_CONNECTED:
            if len(shape) != 1:
                raise SpecError(i, f"fully_connected needs a flat input, got shape {list(shape)}; add a flatten layer")
            if check_declared and layer.in_dim is not None and layer.in_dim != shape[0]:
                raise SpecError(i, f"in_dim {layer.in_dim} does not chain from previous output {shape[0]}")
            out = layer.out_dim if i == output_index else scale_width(layer.out_dim, multiplier)
            resolved.append(ResolvedLayer(
                index=i, kind=layer.kind, in_shape=shape, out_shape=(out,),
                in_features=shape[0], out_features=out, hidden=i != output_index,
            ))
            shape = (out,)
        elif layer.kind == LayerKind.CONV2D:
            if len(shape) != 3:
                raise SpecError(i, f"conv2d needs a (channels, height, width) input, got shape {list(shape)}")
            if check_declared and layer.in_channels is not None and layer.in_channels != shape[0]:
                raise SpecError(i, f"in_channels {layer.in_channels} does not chain from previous output {shape[0]}")
            out = layer.out_channels if i == output_index else scale_width(layer.out_channels, multiplier)
            height = conv_output_size(shape[1], layer.stride, layer.padding)
            width = conv_output_size(shape[2], layer.stride, layer.padding)
            if height < 1 or width < 1:
                raise SpecError(i, f"input {list(shape)} too small for a 3x3 kernel")
            out_shape = (out, height, width)
            resolved.append(ResolvedLayer(
                index=i, kind=layer.kind, in_shape=shape, out_shape=out_shape,
                in_features=shape[0], out_features=out, stride=layer.stride,
                padding=layer.padding, hidden=i != output_index,
            ))
            shape = out_shape
        elif layer.kind == LayerKind.ACTIVATION:
            resolved.append(ResolvedLayer(index=i, kind=layer.kind, in_shape=shape, out_shape=shape,
                                          activation=layer.activation))
        elif layer.kind == LayerKind.FLATTEN:
            flat = (int(math.prod(shape)),)
            resolved.append(ResolvedLayer(index=i, kind=layer.kind, in_shape=shape, out_shape=flat))
            shape = flat
        else:
            if len(shape) != 3:
                raise SpecError(i, f"global_avg_pool needs a (channels, height, width) input, got shape {list(shape)}")
            pooled = (shape[0],)
            resolved.append(ResolvedLayer(index=i, kind=layer.kind, in_shape=shape, out_shape=pooled))
            shape = pooled
    return resolved


def hidden_layer_ids(layers: Sequence[ResolvedLayer]) -> List[int]:
    return [layer.index for layer in layers if layer.is_parametric and layer.hidden]


def select_target_layers(layers: Sequence[ResolvedLayer], requested: Optional[Sequence[int]]) -> List[int]:
    """Default: every hidden parametric layer; explicit lists must stay within them"""
    eligible = hidden_layer_ids(layers)
    if requested is None:
        return eligible
    for layer_id in requested:
        if layer_id not in eligible:
            raise ConfigurationError(
                f"layer {layer_id} cannot host dendrites; eligible hidden layers are {eligible}"
            )
    return sorted(set(requested))


def dendrite_cycle_params(layer: ResolvedLayer, cycle: int, cascade: bool) -> int:
    """n * (d + c + 1) + n for one cycle on one host layer"""
    n, d = layer.out_features, layer.presynaptic_inputs
    c = cycle if cascade else 0
    return n * (d + c + 1) + n


def predict_param_count(
    spec: NetworkSpec,
    cycles: int = 0,
    config: Optional[PBConfig] = None,
    include_dendrites: bool = True,
) -> int:
    """Closed-form parameter count of a spec after ``cycles`` dendrite cycles"""
    layers = resolve_layers(spec)
    total = sum(layer.param_count for layer in layers)
    if not include_dendrites or cycles == 0:
        return total
    config = config or PBConfig()
    by_index = {layer.index: layer for layer in layers}
    for layer_id in select_target_layers(layers, config.target_layers):
        for c in range(cycles):
            total += dendrite_cycle_params(by_index[layer_id], c, config.cascade_dendrites)
    return total
