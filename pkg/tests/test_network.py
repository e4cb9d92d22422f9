import numpy as np
import pytest

from app.models.schemas import ActivationKind, GroupSelector, LayerKind, NetworkSpec, PBConfig
from app.network.builder import (
    dendrite_cycle_params,
    predict_param_count,
    resolve_layers,
    scale_width,
    select_target_layers,
)
from app.network.graph import build_network, count_params, forward, predict, set_trainable
from app.utils.exceptions import ConfigurationError, DimensionError, SpecError


def test_mlp_spec_interleaves_activations():
    spec = NetworkSpec.mlp([2, 4, 3], ActivationKind.RELU)
    assert [layer.kind for layer in spec.layers] == [
        LayerKind.FULLY_CONNECTED, LayerKind.ACTIVATION, LayerKind.FULLY_CONNECTED,
    ]


@pytest.mark.parametrize("dim, m, expected", [(16, 1.0, 16), (16, 0.5, 8), (16, 0.125, 2), (3, 0.5, 2), (4, 0.1, 1)])
def test_scale_width_rounds_half_up_with_floor_of_one(dim, m, expected):
    assert scale_width(dim, m) == expected


def test_width_multiplier_keeps_input_and_output():
    spec = NetworkSpec.mlp([2, 16, 16, 2], width_multiplier=0.25)
    layers = [layer for layer in resolve_layers(spec) if layer.is_parametric]
    assert [(layer.in_features, layer.out_features) for layer in layers] == [(2, 4), (4, 4), (4, 2)]


def test_param_count_of_small_mlp(small_spec):
    model = build_network(small_spec)
    assert count_params(model) == (2 * 8 + 8) + (8 * 8 + 8) + (8 * 2 + 2)
    assert count_params(model) == predict_param_count(small_spec)


def test_spec_error_names_the_layer():
    spec = NetworkSpec.model_validate({
        "input_shape": [2],
        "layers": [
            {"kind": "fully_connected", "in_dim": 2, "out_dim": 4},
            {"kind": "fully_connected", "in_dim": 5, "out_dim": 2},
        ],
    })
    with pytest.raises(SpecError) as excinfo:
        build_network(spec)
    assert excinfo.value.layer_index == 1


def test_fully_connected_after_conv_needs_flatten():
    spec = NetworkSpec.model_validate({
        "input_shape": [1, 4, 4],
        "layers": [
            {"kind": "conv2d", "in_channels": 1, "out_channels": 2},
            {"kind": "fully_connected", "out_dim": 2},
        ],
    })
    with pytest.raises(SpecError, match="flatten"):
        resolve_layers(spec)


def test_network_without_parametric_layer():
    spec = NetworkSpec.model_validate({"input_shape": [2], "layers": [{"kind": "activation", "activation": "tanh"}]})
    with pytest.raises(ConfigurationError):
        build_network(spec)


def test_init_is_deterministic_per_seed(small_spec):
    a, b = build_network(small_spec), build_network(small_spec)
    assert a.digest() == b.digest()
    other = build_network(small_spec.model_copy(update={"seed": 6}))
    assert other.digest() != a.digest()


def test_biases_start_at_zero(small_spec):
    model = build_network(small_spec)
    for name, group in model.groups.items():
        if name.endswith(".bias"):
            assert not group.values.any()


def test_forward_shapes(small_spec, rng):
    model = build_network(small_spec)
    assert predict(model, rng.standard_normal((5, 2))).shape == (5, 2)
    with pytest.raises(DimensionError):
        forward(model, rng.standard_normal((5, 3)))


def test_conv_forward_accepts_flat_images(conv_spec, rng):
    model = build_network(conv_spec)
    flat = rng.standard_normal((3, 36))
    nchw = flat.reshape(3, 1, 6, 6)
    np.testing.assert_array_equal(predict(model, flat), predict(model, nchw))
    assert predict(model, flat).shape == (3, 3)


def test_conv_param_count(conv_spec):
    model = build_network(conv_spec)
    assert count_params(model) == (9 * 1 * 4 + 4) + (9 * 4 * 4 + 4) + (4 * 3 + 3)


def test_hidden_layers_exclude_output(small_spec, conv_spec):
    assert build_network(small_spec).hidden_layers == [0, 2]
    assert build_network(conv_spec).hidden_layers == [0, 2]


def test_target_layers_must_be_hidden(small_spec):
    layers = resolve_layers(small_spec)
    assert select_target_layers(layers, [2]) == [2]
    with pytest.raises(ConfigurationError):
        select_target_layers(layers, [4])


def test_set_trainable_main(small_spec):
    model = build_network(small_spec)
    set_trainable(model, GroupSelector.MAIN, False)
    assert not any(g.trainable for g in model.groups.values())
    assert not model.main_trainable
    set_trainable(model, GroupSelector.MAIN, True)
    assert all(g.tensor.requires_grad for g in model.groups.values())


@pytest.mark.parametrize("cascade, expected", [(True, [32, 40, 48]), (False, [32, 32, 32])])
def test_dendrite_cycle_params(cascade, expected):
    # n=8 neurons, d=2 inputs: n * (d + c + 1) + n
    layer = resolve_layers(NetworkSpec.mlp([2, 8, 3]))[0]
    assert [dendrite_cycle_params(layer, c, cascade) for c in range(3)] == expected


def test_one_cycle_adds_thirty_two_params_for_eight_neurons_two_inputs():
    spec = NetworkSpec.mlp([2, 8, 3])
    assert predict_param_count(spec, 1, PBConfig()) - predict_param_count(spec) == 32


def test_predict_param_count_respects_target_layers(small_spec):
    only_second = PBConfig(target_layers=[2])
    assert predict_param_count(small_spec, 1, only_second) - predict_param_count(small_spec) == 8 * (8 + 1) + 8


def test_half_width_example():
    assert count_params(build_network(NetworkSpec.mlp([2, 8, 2], width_multiplier=0.5))) == 22


def _closed_form_mlp(sizes, m):
    widths = [sizes[0]] + [scale_width(h, m) for h in sizes[1:-1]] + [sizes[-1]]
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


@pytest.mark.parametrize("seed", range(50))
def test_width_halving_removes_the_closed_form_difference(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 5))
    sizes = [int(rng.integers(1, 6))] + [int(h) for h in rng.integers(1, 33, size=depth)] + [int(rng.integers(2, 6))]
    full = count_params(build_network(NetworkSpec.mlp(sizes, seed=seed)))
    half = count_params(build_network(NetworkSpec.mlp(sizes, width_multiplier=0.5, seed=seed)))
    assert full - half == _closed_form_mlp(sizes, 1.0) - _closed_form_mlp(sizes, 0.5)
