"""
Candidate dendrite pools: spawning, correlation ascent and integration

Candidates live off-graph while they train. Pools are vectorised over
pool_size K and host neurons n; a pool for a host with d presynaptic inputs
and c installed cycles holds (K, d, n) input weights, (K, c, n) cascade
weights and (K, n) biases.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from app.engine import ops
from app.engine.seeding import derive_seed, make_rng
from app.models.schemas import ActivationKind, LayerKind, PBConfig
from app.network.builder import select_target_layers
from app.network.graph import ForwardTrace, ModelGraph
from app.network.parameters import GroupRole, ParameterGroup
from app.pb.correlation import ErrorMatrix, pool_covariance
from app.pb.dendrites import DendriteBlock, DendriteCycle
from app.utils.exceptions import ConfigurationError, DimensionError, UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidateInputs:
    """What a host layer's candidates see: the host input rows plus prior dendrite outputs"""
    rows: np.ndarray
    prior: np.ndarray
    rows_per_sample: int = 1

    @property
    def samples(self) -> int:
        return self.rows.shape[0] // self.rows_per_sample

    def subset(self, samples: np.ndarray) -> "CandidateInputs":
        L = self.rows_per_sample
        index = (np.asarray(samples)[:, None] * L + np.arange(L)).reshape(-1)
        return CandidateInputs(self.rows[index], self.prior[index], L)


@dataclass(frozen=True)
class CandidateState:
    layer_id: int
    input_weight: np.ndarray
    cascade_weight: np.ndarray
    bias: np.ndarray
    activation: ActivationKind
    cascade: bool = True
    values: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None

    @property
    def pool_size(self) -> int:
        return self.input_weight.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.input_weight.shape[1]

    @property
    def n_neurons(self) -> int:
        return self.input_weight.shape[2]

    @property
    def prior_cycles(self) -> int:
        return self.cascade_weight.shape[1]

    @property
    def candidate_count(self) -> int:
        return self.pool_size * self.n_neurons

    @property
    def params_per_candidate(self) -> int:
        return self.n_inputs + self.prior_cycles + 1

    @property
    def means(self) -> Optional[np.ndarray]:
        return None if self.values is None else self.values.mean(axis=0)


def dendrite_activation(model: ModelGraph, layer_id: int, config: PBConfig) -> ActivationKind:
    """Configured kind, else the activation that follows the host layer, else tanh"""
    if config.dendrite_activation is not None:
        return config.dendrite_activation
    following = model.layers[layer_id + 1:]
    for layer in following:
        if layer.kind == LayerKind.ACTIVATION:
            return layer.activation
        if layer.is_parametric:
            break
    return ActivationKind.TANH


def candidate_inputs(model: ModelGraph, layer_id: int, trace: ForwardTrace) -> CandidateInputs:
    """Host inputs from a trace, plus the outputs of this layer's installed dendrites"""
    rows = trace.layer_inputs[layer_id]
    block = model.dendrites.get(layer_id)
    if block is not None and block.cascade:
        prior = block.output_values(rows)
    else:
        prior = np.zeros((rows.shape[0], 0, model.layer(layer_id).out_features))
    return CandidateInputs(rows, prior, trace.rows_per_sample[layer_id])


def spawn_candidates(model: ModelGraph, layer: int, config: PBConfig, seed: int) -> CandidateState:
    """pool_size Glorot-initialised candidates per host neuron; the model is not touched"""
    if layer not in select_target_layers(model.layers, config.target_layers):
        raise ConfigurationError(f"layer {layer} is not a dendrite target layer")
    host = model.layer(layer)
    block = model.dendrites.get(layer)
    cascade = block.cascade if block is not None else config.cascade_dendrites
    c = block.cycle_count if (block is not None and cascade) else 0
    d, n, K = host.presynaptic_inputs, host.out_features, config.pool_size

    rng = make_rng(derive_seed(seed, "candidates", layer))
    limit = math.sqrt(6.0 / (d + c + 1))
    weights = rng.uniform(-limit, limit, size=(K, d + c, n))
    activation = block.activation if block is not None else dendrite_activation(model, layer, config)
    logger.debug(f"Spawned {K * n} candidates on layer {layer} (d={d}, c={c})")
    return CandidateState(
        layer_id=layer,
        input_weight=weights[:, :d, :].copy(),
        cascade_weight=weights[:, d:, :].copy(),
        bias=np.zeros((K, n)),
        activation=activation,
        cascade=cascade,
    )


def _net_input(pool: CandidateState, inputs: CandidateInputs) -> np.ndarray:
    if inputs.rows.shape[1] != pool.n_inputs:
        raise DimensionError(f"candidate inputs have {inputs.rows.shape[1]} features, pool expects {pool.n_inputs}")
    net = np.einsum("rd,kdn->rkn", inputs.rows, pool.input_weight) + pool.bias[None]
    if pool.prior_cycles:
        net = net + np.einsum("rcn,kcn->rkn", inputs.prior, pool.cascade_weight)
    return net


def _per_sample(values: np.ndarray, rows_per_sample: int) -> np.ndarray:
    if rows_per_sample == 1:
        return values
    R, K, n = values.shape
    return values.reshape(R // rows_per_sample, rows_per_sample, K, n).mean(axis=1)


def candidate_objective(pool: CandidateState, inputs: CandidateInputs, E: ErrorMatrix) -> CandidateState:
    """Evaluate V and S for every candidate on a batch"""
    net = _net_input(pool, inputs)
    values = _per_sample(ops.activate(net, pool.activation), inputs.rows_per_sample)
    scores = np.abs(pool_covariance(values, E)).sum(axis=-1)
    return replace(pool, values=values, scores=scores)


def candidate_gradients(pool: CandidateState, inputs: CandidateInputs, E: ErrorMatrix):
    """dS/dA, dS/dG, dS/db with S as in the module docstring, plus the scores"""
    net = _net_input(pool, inputs)
    out = ops.activate(net, pool.activation)
    values = _per_sample(out, inputs.rows_per_sample)
    covariance = pool_covariance(values, E)
    sigma = np.sign(covariance)
    dvalues = np.einsum("kno,po->pkn", sigma, E.centered)
    L = inputs.rows_per_sample
    if L > 1:
        dvalues = np.repeat(dvalues, L, axis=0) / L
    delta = dvalues * ops.activation_derivative(net, out, pool.activation)
    d_input = np.einsum("rd,rkn->kdn", inputs.rows, delta)
    d_cascade = np.einsum("rcn,rkn->kcn", inputs.prior, delta)
    d_bias = delta.sum(axis=0)
    return d_input, d_cascade, d_bias, np.abs(covariance).sum(axis=-1)


def candidate_step(pool: CandidateState, inputs: CandidateInputs, E: ErrorMatrix, lr_candidate: float) -> CandidateState:
    """One gradient-ascent step on S; only candidate parameters change"""
    d_input, d_cascade, d_bias, scores = candidate_gradients(pool, inputs, E)
    return replace(
        pool,
        input_weight=pool.input_weight + lr_candidate * d_input,
        cascade_weight=pool.cascade_weight + lr_candidate * d_cascade,
        bias=pool.bias + lr_candidate * d_bias,
        values=None,
        scores=None,
    )


def select_and_integrate(model: ModelGraph, pool: CandidateState) -> List[int]:
    """
    Install the best-scoring candidate of every neuron as a new dendrite cycle

    Input weights and bias are locked; the new output weight starts at exactly
    zero, so the network computes the same function as before. Returns the
    chosen candidate index per neuron.
    """
    if pool.pool_size == 0 or pool.n_neurons == 0:
        raise UsageError("cannot integrate from an empty candidate pool")
    if pool.scores is None:
        raise UsageError("candidate pool has not been scored; run candidate_objective first")

    host = model.layer(pool.layer_id)
    block = model.dendrites.get(pool.layer_id)
    if block is None:
        block = DendriteBlock(
            layer_id=pool.layer_id,
            n_neurons=host.out_features,
            n_inputs=host.presynaptic_inputs,
            activation=pool.activation,
            cascade=pool.cascade,
        )
    expected_prior = block.cycle_count if block.cascade else 0
    if pool.prior_cycles != expected_prior or pool.n_inputs != block.n_inputs:
        raise UsageError(f"candidate pool for layer {pool.layer_id} is stale; respawn after the last integration")

    best = np.argmax(pool.scores, axis=0)
    neurons = np.arange(pool.n_neurons)
    cycle = block.cycle_count
    prefix = f"layer{pool.layer_id}.dendrite{cycle}"

    def locked(suffix: str, values: np.ndarray) -> ParameterGroup:
        return ParameterGroup.create(f"{prefix}.{suffix}", pool.layer_id, GroupRole.DENDRITE_INPUT,
                                     values, trainable=False, locked=True)

    input_weight = locked("input_weight", pool.input_weight[best, :, neurons].T)
    cascade_weight = None
    if pool.prior_cycles:
        cascade_weight = locked("cascade_weight", pool.cascade_weight[best, :, neurons].T)
    input_bias = locked("input_bias", pool.bias[best, neurons])
    output_weight = ParameterGroup.create(f"{prefix}.output_weight", pool.layer_id, GroupRole.DENDRITE_OUTPUT,
                                          np.zeros(pool.n_neurons), trainable=model.main_trainable)

    new_cycle = DendriteCycle(cycle, input_weight, input_bias, output_weight, cascade_weight)
    for group in new_cycle.groups():
        model.register(group)
    block.cycles.append(new_cycle)
    model.dendrites[pool.layer_id] = block
    logger.info(f"🌱 Integrated dendrite cycle {cycle} on layer {pool.layer_id} "
                f"(+{sum(g.size for g in new_cycle.groups())} params)")
    return best.tolist()
