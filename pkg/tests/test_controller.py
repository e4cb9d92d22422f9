import numpy as np
import pytest

import app.pb.controller as controller
from app.models.schemas import GroupSelector, PBConfig, Phase, TrainReport
from app.network.builder import predict_param_count
from app.network.graph import build_network, count_params
from app.network.parameters import GroupRole
from app.pb.controller import PhaseState, pb_train, run_dendrite_phase, run_normal_phase
from app.services.dataset_service import gen_blobs, gen_two_spirals
from app.services.experiment_service import run_experiment
from app.services.trainer import Metrics, evaluate
from app.utils.exceptions import TrainingError, UsageError


def _rows(report, phase):
    return [r for r in report.epochs if r.phase == phase]


def test_phase_transitions():
    state = PhaseState()
    with pytest.raises(UsageError):
        state.transition(Phase.NORMAL_TRAINING)
    state.transition(Phase.DENDRITE_TRAINING)
    assert state.cycle == 0
    state.transition(Phase.NORMAL_TRAINING)
    assert state.cycle == 1 and state.phase == Phase.NORMAL_TRAINING


def test_phase_runners_check_the_current_phase(small_spec, spirals, fast_config, tmp_path):
    model = build_network(small_spec)
    state = PhaseState(best_weights_path=tmp_path / "best.pbw")
    with pytest.raises(UsageError):
        run_dendrite_phase(model, spirals, fast_config, state, TrainReport(), seed=0)


def test_pb_train_needs_a_split(small_spec, fast_config):
    data = gen_two_spirals(10, 1.0, 0.0, seed=0)
    with pytest.raises(UsageError, match="split"):
        pb_train(build_network(small_spec), data, fast_config, seed=0)


def test_zero_cycles_is_plain_training(small_spec, spirals, fast_config):
    baseline = fast_config.model_copy(update={"max_cycles": 0})
    a, b = build_network(small_spec), build_network(small_spec)
    report_a = pb_train(a, spirals, baseline, seed=1)
    report_b = run_experiment(b, spirals, fast_config, seed=1, baseline=True).report

    assert report_a == report_b
    assert a.digest() == b.digest()
    assert report_a.cycles_completed == 0
    assert not a.dendrites
    assert {r.phase for r in report_a.epochs} == {Phase.NORMAL_TRAINING}
    assert report_a.final_params == predict_param_count(small_spec)


def test_training_is_deterministic(small_spec, spirals, fast_config):
    first, second = build_network(small_spec), build_network(small_spec)
    assert pb_train(first, spirals, fast_config, seed=2) == pb_train(second, spirals, fast_config, seed=2)
    assert first.digest() == second.digest()


def test_fixed_cycles_match_closed_form_params(small_spec, spirals, fast_config):
    config = fast_config.model_copy(update={"stop_on_plateau": False})
    model = build_network(small_spec)
    report = pb_train(model, spirals, config, seed=3)
    assert report.cycles_completed == 2
    assert report.stopped_reason == "max_cycles"
    assert report.final_params == count_params(model) == predict_param_count(small_spec, 2, config)
    assert all(block.cycle_count == 2 for block in model.dendrites.values())


def test_report_rows(small_spec, spirals, fast_config):
    config = fast_config.model_copy(update={"stop_on_plateau": False, "max_cycles": 1})
    report = pb_train(build_network(small_spec), spirals, config, seed=4)

    normal_epoch_zero = [r for r in _rows(report, Phase.NORMAL_TRAINING) if r.epoch == 0]
    assert [r.cycle for r in normal_epoch_zero] == [0, 1]
    dendrite_rows = _rows(report, Phase.DENDRITE_TRAINING)
    assert dendrite_rows and {r.cycle for r in dendrite_rows} == {0}
    # the network is frozen while candidates train
    assert len({(r.train_loss, r.train_acc, r.val_acc, r.params) for r in dendrite_rows}) == 1
    assert all(r.wall_time_s == 0.0 for r in report.epochs)
    assert 0.0 <= report.test_acc <= 1.0


def test_best_val_never_drops_across_cycles(small_spec, spirals, fast_config):
    config = fast_config.model_copy(update={"stop_on_plateau": False, "max_cycles": 2})
    report = pb_train(build_network(small_spec), spirals, config, seed=5)
    # the untrained epoch-0 row of cycle 0 is never a restore candidate
    normal = [r for r in _rows(report, Phase.NORMAL_TRAINING) if r.cycle or r.epoch]
    for cycle in (1, 2):
        start = next(r.val_acc for r in normal if r.cycle == cycle and r.epoch == 0)
        previous = max(r.val_acc for r in normal if r.cycle == cycle - 1)
        assert start >= previous - config.improvement_epsilon
    assert report.best_val_acc >= max(r.val_acc for r in normal if r.epoch == 0)


def test_dendrite_phase_leaves_main_weights_alone(small_spec, spirals, fast_config, tmp_path):
    model = build_network(small_spec)
    before = {n: g.values.copy() for n, g in model.groups.items() if g.role in (GroupRole.WEIGHT, GroupRole.BIAS)}
    state = PhaseState(phase=Phase.DENDRITE_TRAINING, best_weights_path=tmp_path / "best.pbw")
    report = TrainReport()

    chosen = run_dendrite_phase(model, spirals, fast_config, state, report, seed=0)

    assert sorted(chosen) == [0, 2]
    for name, values in before.items():
        np.testing.assert_array_equal(model.groups[name].values, values)
    assert all(g.trainable for g in model.select(GroupSelector.MAIN))
    assert report.epochs[0].epoch == 0


def test_normal_phase_leaves_dendrite_inputs_alone(small_spec, spirals, fast_config, tmp_path):
    model = build_network(small_spec)
    state = PhaseState(phase=Phase.DENDRITE_TRAINING, best_weights_path=tmp_path / "best.pbw")
    report = TrainReport()
    run_dendrite_phase(model, spirals, fast_config, state, report, seed=0)
    state.transition(Phase.NORMAL_TRAINING)
    frozen = model.digest(GroupSelector.DENDRITE_INPUT)

    run_normal_phase(model, spirals, fast_config, state, report, seed=0)

    assert model.digest(GroupSelector.DENDRITE_INPUT) == frozen


def test_failure_keeps_the_partial_report(small_spec, spirals, fast_config, monkeypatch):
    def explode(*args, **kwargs):
        raise RuntimeError("candidate pool exploded")

    monkeypatch.setattr(controller, "run_dendrite_phase", explode)
    with pytest.raises(TrainingError) as excinfo:
        pb_train(build_network(small_spec), spirals, fast_config, seed=0)
    partial = excinfo.value.report
    assert partial is not None and partial.epochs
    assert {r.phase for r in partial.epochs} == {Phase.NORMAL_TRAINING}


def test_workdir_holds_best_weights(small_spec, spirals, fast_config, tmp_path):
    pb_train(build_network(small_spec), spirals, fast_config.model_copy(update={"max_cycles": 0}), 0, workdir=tmp_path)
    assert (tmp_path / "best.pbw").read_bytes()[:4] == b"PBW1"


def test_plateau_stops_early(small_spec, spirals):
    # a huge epsilon means no cycle can count as an improvement
    config = PBConfig(pool_size=2, candidate_epochs=2, max_normal_epochs=2, normal_patience=1,
                      dendrite_patience=1, max_cycles=3, batch_size=32, improvement_epsilon=2.0)
    report = pb_train(build_network(small_spec), spirals, config, seed=0)
    assert report.stopped_reason == "plateau"
    assert report.cycles_completed == 1


def test_separable_blobs_are_learned(small_spec):
    data = gen_blobs(50, 2, 10.0, 0.1, seed=0).split(seed=1)
    config = PBConfig(max_cycles=0, max_normal_epochs=40, normal_patience=40, lr_main=0.1, batch_size=16)
    model = build_network(small_spec)
    pb_train(model, data, config, seed=0)
    assert evaluate(model, data, data.train).accuracy >= 0.99


def _scripted(monkeypatch, val_script):
    """Replace training with a bias bump per epoch and feed fixed (accuracy, loss) pairs for the val split"""
    script = iter(val_script)

    def fake_evaluate(model, data, index, task=None):
        if index is data.val:
            accuracy, loss = next(script)
            return Metrics(loss, accuracy)
        return Metrics(1.0, 0.5)

    def fake_train_epoch(model, data, lr, batch_size, rng, task=None):
        group = model.groups["layer0.bias"]
        group.assign(group.values + 1.0)
        return 1.0

    monkeypatch.setattr(controller, "evaluate", fake_evaluate)
    monkeypatch.setattr(controller, "train_epoch", fake_train_epoch)


def _bumps_after_normal_phase(model, spirals, config, state, tmp_path):
    start = model.groups["layer0.bias"].values.copy()
    state.best_weights_path = tmp_path / "best.pbw"
    run_normal_phase(model, spirals, config, state, TrainReport(), seed=0)
    return float(np.mean(model.groups["layer0.bias"].values - start))


def test_untrained_weights_never_win_the_first_phase(small_spec, spirals, fast_config, monkeypatch, tmp_path):
    _scripted(monkeypatch, [(0.56, 0.70), (0.50, 0.69), (0.52, 0.69), (0.51, 0.69), (0.51, 0.69), (0.50, 0.69)])
    config = fast_config.model_copy(update={"normal_patience": 3, "max_normal_epochs": 10})
    state = PhaseState()
    assert _bumps_after_normal_phase(build_network(small_spec), spirals, config, state, tmp_path) == pytest.approx(2.0)
    assert state.best_val == 0.52


def test_accuracy_tie_goes_to_lower_val_loss(small_spec, spirals, fast_config, monkeypatch, tmp_path):
    _scripted(monkeypatch, [(0.60, 0.70), (0.60, 0.60), (0.60, 0.65), (0.60, 0.65)])
    config = fast_config.model_copy(update={"normal_patience": 2, "max_normal_epochs": 10})
    state = PhaseState(cycle=1, best_val=0.60)
    assert _bumps_after_normal_phase(build_network(small_spec), spirals, config, state, tmp_path) == pytest.approx(1.0)


def test_falling_val_loss_keeps_the_phase_going(small_spec, spirals, fast_config, monkeypatch, tmp_path):
    _scripted(monkeypatch, [(0.60, 0.70), (0.59, 0.65), (0.59, 0.60), (0.59, 0.55), (0.62, 0.50),
                            (0.60, 0.50), (0.60, 0.50)])
    config = fast_config.model_copy(update={"normal_patience": 2, "max_normal_epochs": 10})
    state = PhaseState(cycle=1, best_val=0.60)
    assert _bumps_after_normal_phase(build_network(small_spec), spirals, config, state, tmp_path) == pytest.approx(4.0)
    assert state.best_val == 0.62
