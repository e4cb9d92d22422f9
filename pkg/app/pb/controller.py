"""
Alternating-phase controller

    NORMAL_TRAINING   minibatch descent on the task loss with patience on
                      validation accuracy; best weights restored at the end
    DENDRITE_TRAINING main weights frozen; candidate pools on every target
                      layer climb the correlation score; the best per neuron
                      is installed with a zero output weight

The loop stops when a full cycle improves the best validation accuracy by
less than ``improvement_epsilon`` or ``max_cycles`` cycles have run.
"""

import logging
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, Optional, Union

from app.engine.seeding import derive_seed, make_rng
from app.engine.tensor import no_grad
from app.models.schemas import EpochRecord, GroupSelector, PBConfig, Phase, TrainReport
from app.network.builder import select_target_layers
from app.network.graph import ForwardTrace, ModelGraph, count_params, forward, set_trainable
from app.pb.candidates import (
    CandidateInputs,
    CandidateState,
    candidate_inputs,
    candidate_objective,
    candidate_step,
    select_and_integrate,
    spawn_candidates,
)
from app.pb.correlation import residual_error
from app.services.dataset_service import Dataset
from app.services.trainer import Metrics, evaluate, train_epoch
from app.storage.weight_file import load_weights, save_weights
from app.utils.exceptions import PBError, TrainingError, UsageError

logger = logging.getLogger(__name__)

NEXT_PHASE = {
    Phase.NORMAL_TRAINING: Phase.DENDRITE_TRAINING,
    Phase.DENDRITE_TRAINING: Phase.NORMAL_TRAINING,
}


@dataclass
class PhaseState:
    """Where the controller is; the cycle index counts completed dendrite phases"""
    phase: Phase = Phase.NORMAL_TRAINING
    cycle: int = 0
    best_val: float = float("-inf")
    epochs_without_improvement: int = 0
    best_weights_path: Optional[Path] = None

    def transition(self, to: Phase) -> None:
        to = Phase(to)
        if NEXT_PHASE[self.phase] != to:
            raise UsageError(f"invalid phase transition {self.phase.value} -> {to.value}")
        if self.phase == Phase.DENDRITE_TRAINING:
            self.cycle += 1
        logger.info(f"🔄 Phase {self.phase.value} -> {to.value} (cycle {self.cycle})")
        self.phase = to
        self.epochs_without_improvement = 0


class _Clock:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.start = time.perf_counter()

    def elapsed(self) -> float:
        return round(time.perf_counter() - self.start, 3) if self.enabled else 0.0


@contextmanager
def _weights_dir(workdir: Optional[Union[str, Path]]) -> Iterator[Path]:
    if workdir is not None:
        path = Path(workdir)
        path.mkdir(parents=True, exist_ok=True)
        yield path
        return
    with tempfile.TemporaryDirectory(prefix="pb-") as tmp:
        yield Path(tmp)


def _record(report: TrainReport, model: ModelGraph, state: PhaseState, epoch: int,
            train: Metrics, val: Metrics, clock: _Clock) -> EpochRecord:
    row = EpochRecord(
        cycle=state.cycle,
        phase=state.phase,
        epoch=epoch,
        train_loss=train.loss,
        train_acc=train.accuracy,
        val_acc=val.accuracy,
        params=count_params(model),
        wall_time_s=clock.elapsed(),
    )
    report.epochs.append(row)
    return row


def _beats(val: Metrics, best: Metrics, config: PBConfig) -> bool:
    """Higher val accuracy wins; an accuracy tie goes to the lower val loss"""
    if val.accuracy > best.accuracy + config.improvement_epsilon:
        return True
    return val.accuracy >= best.accuracy and val.loss < best.loss * (1.0 - config.loss_tolerance)


def run_normal_phase(
    model: ModelGraph,
    data: Dataset,
    config: PBConfig,
    state: PhaseState,
    report: TrainReport,
    seed: int,
    clock: Optional[_Clock] = None,
) -> float:
    """Train main groups until validation stalls, then restore the best weights; returns the phase best"""
    if state.phase != Phase.NORMAL_TRAINING:
        raise UsageError(f"normal phase started while in {state.phase.value}")
    clock = clock or _Clock(False)
    dendrite_digest = model.digest(GroupSelector.DENDRITE_INPUT)
    rng = make_rng(derive_seed(seed, "normal", state.cycle))

    train_metrics = evaluate(model, data, data.train, config.task)
    val_metrics = evaluate(model, data, data.val, config.task)
    _record(report, model, state, 0, train_metrics, val_metrics, clock)
    save_weights(model, state.best_weights_path)
    # untrained weights never win; later phases start from the previous best so cannot end worse
    untrained = state.best_val == float("-inf")
    best, best_train = (None, None) if untrained else (val_metrics, train_metrics)
    lowest_loss = val_metrics.loss
    state.epochs_without_improvement = 0

    for epoch in range(1, config.max_normal_epochs + 1):
        train_epoch(model, data, config.lr_main, config.batch_size, rng, config.task)
        train_metrics = evaluate(model, data, data.train, config.task)
        val_metrics = evaluate(model, data, data.val, config.task)
        _record(report, model, state, epoch, train_metrics, val_metrics, clock)
        logger.debug(f"cycle {state.cycle} epoch {epoch}: loss {train_metrics.loss:.6f} "
                     f"train {train_metrics.accuracy:.4f} val {val_metrics.accuracy:.4f} "
                     f"val loss {val_metrics.loss:.6f}")

        progressed = False
        if best is None or _beats(val_metrics, best, config):
            best, best_train = val_metrics, train_metrics
            save_weights(model, state.best_weights_path)
            progressed = True
        # a falling val loss keeps the phase alive through accuracy plateaus
        if val_metrics.loss < lowest_loss * (1.0 - config.loss_tolerance):
            lowest_loss = val_metrics.loss
            progressed = True

        if progressed:
            state.epochs_without_improvement = 0
        else:
            state.epochs_without_improvement += 1
            if state.epochs_without_improvement >= config.normal_patience:
                break

    load_weights(model, state.best_weights_path)
    if model.digest(GroupSelector.DENDRITE_INPUT) != dendrite_digest:
        raise TrainingError(f"installed dendrite inputs changed during normal phase of cycle {state.cycle}")

    phase_best = best.accuracy
    if phase_best < state.best_val - config.improvement_epsilon:
        raise TrainingError(f"best val fell from {state.best_val:.4f} to {phase_best:.4f} in cycle {state.cycle}")
    if phase_best > state.best_val:
        state.best_val = phase_best
        report.best_val_acc = phase_best
        report.best_train_acc = best_train.accuracy
    logger.info(f"✅ Normal phase {state.cycle} done: best val {phase_best:.4f} (val loss {best.loss:.4f})")
    return phase_best


def _total_score(pools: Dict[int, CandidateState]) -> float:
    return float(sum(pool.scores.sum() for pool in pools.values()))


def run_dendrite_phase(
    model: ModelGraph,
    data: Dataset,
    config: PBConfig,
    state: PhaseState,
    report: TrainReport,
    seed: int,
    clock: Optional[_Clock] = None,
) -> Dict[int, list]:
    """Grow one dendrite per neuron on every target layer; main groups stay bit-identical"""
    if state.phase != Phase.DENDRITE_TRAINING:
        raise UsageError(f"dendrite phase started while in {state.phase.value}")
    clock = clock or _Clock(False)

    set_trainable(model, GroupSelector.MAIN, False)
    main_digest = model.digest(GroupSelector.MAIN)

    X, T = data.X[data.train], data.targets(data.train)
    E = residual_error(model, X, T, config.task)
    trace = ForwardTrace()
    with no_grad():
        forward(model, X, trace)

    cycle_seed = derive_seed(seed, "cycle", state.cycle)
    targets = select_target_layers(model.layers, config.target_layers)
    inputs: Dict[int, CandidateInputs] = {L: candidate_inputs(model, L, trace) for L in targets}
    pools: Dict[int, CandidateState] = {
        L: candidate_objective(spawn_candidates(model, L, config, cycle_seed), inputs[L], E) for L in targets
    }
    best_pools, best_total = dict(pools), _total_score(pools)

    # frozen network: one evaluation serves every row of this phase
    train_metrics = evaluate(model, data, data.train, config.task)
    val_metrics = evaluate(model, data, data.val, config.task)
    _record(report, model, state, 0, train_metrics, val_metrics, clock)

    rng = make_rng(derive_seed(seed, "candidate-batches", state.cycle))
    stale = 0
    for epoch in range(1, config.candidate_epochs + 1):
        order = rng.permutation(E.patterns)
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            E_batch = E.rows(batch)
            for L in targets:
                pools[L] = candidate_step(pools[L], inputs[L].subset(batch), E_batch, config.lr_candidate)
        pools = {L: candidate_objective(pools[L], inputs[L], E) for L in targets}
        total = _total_score(pools)

        if model.digest(GroupSelector.MAIN) != main_digest:
            raise TrainingError(f"main parameters changed during dendrite epoch {epoch} of cycle {state.cycle}")
        _record(report, model, state, epoch, train_metrics, val_metrics, clock)
        logger.debug(f"cycle {state.cycle} candidate epoch {epoch}: total S {total:.6f}")

        if total > best_total + config.candidate_tolerance * abs(best_total):
            best_pools, best_total = dict(pools), total
            stale = 0
        else:
            stale += 1
            if stale >= config.dendrite_patience:
                break

    if model.digest(GroupSelector.MAIN) != main_digest:
        raise TrainingError(f"main parameters changed during dendrite phase of cycle {state.cycle}")
    chosen = {L: select_and_integrate(model, best_pools[L]) for L in targets}
    set_trainable(model, GroupSelector.MAIN, True)
    logger.info(f"🌿 Dendrite phase {state.cycle} done: total S {best_total:.6f}, "
                f"{count_params(model)} params")
    return chosen


def pb_train(
    model: ModelGraph,
    data: Dataset,
    config: PBConfig,
    seed: int,
    workdir: Optional[Union[str, Path]] = None,
    record_timing: bool = False,
) -> TrainReport:
    """
    Run the phase loop on ``model`` in place and return its trajectory

    ``max_cycles=0`` is plain training with early stopping. A failure raises
    TrainingError whose ``report`` holds every completed epoch.
    """
    if not data.is_split:
        raise UsageError("dataset has no train/val/test split")

    report = TrainReport()
    state = PhaseState()
    clock = _Clock(record_timing)

    try:
        with _weights_dir(workdir) as weights_dir:
            state.best_weights_path = weights_dir / "best.pbw"
            run_normal_phase(model, data, config, state, report, seed, clock)
            report.stopped_reason = "max_cycles"
            while state.cycle < config.max_cycles:
                before = state.best_val
                state.transition(Phase.DENDRITE_TRAINING)
                run_dendrite_phase(model, data, config, state, report, seed, clock)
                state.transition(Phase.NORMAL_TRAINING)
                report.cycles_completed = state.cycle
                run_normal_phase(model, data, config, state, report, seed, clock)
                if config.stop_on_plateau and state.best_val - before < config.improvement_epsilon:
                    report.stopped_reason = "plateau"
                    logger.info(f"⏹️ Stopping after cycle {state.cycle}: val gain below {config.improvement_epsilon}")
                    break
    except TrainingError as e:
        if e.report is None:
            e.report = report
        raise
    except PBError:
        raise
    except Exception as e:
        logger.error(f"❌ Training failed in {state.phase.value} cycle {state.cycle}: {e}", exc_info=True)
        raise TrainingError(f"training failed: {e}", report) from e

    report.final_params = count_params(model)
    if data.test.size:
        digest = model.digest()
        report.test_acc = evaluate(model, data, data.test, config.task).accuracy
        if model.digest() != digest:
            raise TrainingError("test evaluation modified model weights", report)
    logger.info(f"🏁 Training finished ({report.stopped_reason}): {report.cycles_completed} cycles, "
                f"{report.final_params} params, best val {report.best_val_acc:.4f}")
    return report
