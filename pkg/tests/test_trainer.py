import numpy as np

from app.engine import ops
from app.engine.seeding import derive_seed, make_rng
from app.engine.tensor import Tape, backward
from app.models.schemas import GroupSelector
from app.network.graph import build_network, forward, set_trainable
from app.services.trainer import Metrics, evaluate, sgd_step, train_epoch


def test_evaluate_empty_split(small_spec, spirals):
    assert evaluate(build_network(small_spec), spirals, np.zeros(0, dtype=np.int64)) == Metrics(0.0, 0.0)


def test_evaluate_does_not_touch_weights(small_spec, spirals):
    model = build_network(small_spec)
    before = model.digest()
    metrics = evaluate(model, spirals, spirals.val)
    assert model.digest() == before
    assert 0.0 <= metrics.accuracy <= 1.0 and metrics.loss > 0.0


def test_sgd_step_skips_frozen_groups(small_spec, spirals):
    model = build_network(small_spec)
    set_trainable(model, GroupSelector.MAIN, False)
    for group in model.groups.values():
        if group.name.startswith("layer4"):
            group.set_trainable(True)
    with Tape():
        loss, _ = ops.softmax_cross_entropy(forward(model, spirals.X[:8]), spirals.targets(np.arange(8)))
    backward(loss)
    frozen = model.groups["layer0.weight"].values.copy()
    assert sgd_step(model, 0.1) == 2
    np.testing.assert_array_equal(model.groups["layer0.weight"].values, frozen)


def test_train_epoch_lowers_the_loss(small_spec, spirals):
    model = build_network(small_spec)
    rng = make_rng(derive_seed(0, "normal", 0))
    start = evaluate(model, spirals, spirals.train).loss
    for _ in range(20):
        train_epoch(model, spirals, 0.1, 16, rng)
    assert evaluate(model, spirals, spirals.train).loss < start
    assert all(g.tensor.grad is None for g in model.groups.values())
