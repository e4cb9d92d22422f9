"""
Experiment Service: one end-to-end training run and its record
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from app.models.schemas import NetworkSpec, PBConfig, RunRecord, TrainReport
from app.network.graph import ModelGraph, build_network
from app.pb.controller import pb_train
from app.services.dataset_service import Dataset
from app.utils.exceptions import UsageError

logger = logging.getLogger(__name__)


@dataclass
class TrainOutcome:
    model: ModelGraph
    report: TrainReport
    record: RunRecord


def run_id_for(width_multiplier: float, cycles: int, seed: int) -> str:
    return f"m{width_multiplier:g}-c{cycles}-s{seed}"


def run_experiment(
    spec_or_model: Union[NetworkSpec, ModelGraph],
    dataset: Dataset,
    config: PBConfig,
    seed: int,
    baseline: bool = False,
    workdir: Optional[Union[str, Path]] = None,
    record_timing: bool = False,
) -> TrainOutcome:
    """Train (PB or baseline-only), then test once on the best-val weights"""
    if not dataset.is_split:
        raise UsageError("train_eval needs a dataset with a train/val/test split")
    if baseline:
        config = config.model_copy(update={"max_cycles": 0})
    model = spec_or_model if isinstance(spec_or_model, ModelGraph) else build_network(spec_or_model)

    report = pb_train(model, dataset, config, seed, workdir=workdir, record_timing=record_timing)
    multiplier = model.spec.width_multiplier
    record = RunRecord(
        run_id=run_id_for(multiplier, config.max_cycles, seed),
        seed=seed,
        width_multiplier=multiplier,
        dendrite_cycles=report.cycles_completed,
        params=report.final_params,
        train_acc=report.best_train_acc,
        val_acc=report.best_val_acc,
        test_acc=report.test_acc or 0.0,
        wall_time_s=report.epochs[-1].wall_time_s if report.epochs else 0.0,
    )
    return TrainOutcome(model, report, record)


def train_eval(
    spec_or_model: Union[NetworkSpec, ModelGraph],
    dataset: Dataset,
    config: PBConfig,
    seed: int,
    baseline: bool = False,
    **kwargs,
) -> RunRecord:
    return run_experiment(spec_or_model, dataset, config, seed, baseline=baseline, **kwargs).record
