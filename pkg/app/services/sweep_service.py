"""
Sweep Service for the width-multiplier x dendrite-cycle compression grid
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean
from typing import Dict, List, Optional, Tuple, Union

from app.models.schemas import NetworkSpec, PBConfig, RunRecord, SweepConfig
from app.network.builder import predict_param_count
from app.services.dataset_service import Dataset
from app.services.experiment_service import run_experiment, run_id_for
from app.services.report_service import describe_param_change, write_failures_csv, write_sweep_csv
from app.utils.exceptions import TrainingError

logger = logging.getLogger(__name__)

Cell = Tuple[float, int, int]


@dataclass(frozen=True)
class CompressionPoint:
    """Smallest dendrite point of one width that matches the full-width baseline"""
    width_multiplier: float
    dendrite_cycles: int
    params: int
    val_acc: float
    reduction_pct: float


@dataclass
class SweepResult:
    points: List[RunRecord] = field(default_factory=list)
    failures: List[RunRecord] = field(default_factory=list)
    baseline: Optional[RunRecord] = None
    compression: List[CompressionPoint] = field(default_factory=list)


def sweep_cells(config: SweepConfig) -> List[Cell]:
    return sorted(
        (m, c, s)
        for m in set(config.width_multipliers)
        for c in set(config.dendrite_cycles)
        for s in set(config.seeds)
    )


def _run_cell(config: SweepConfig, dataset: Dataset, cell: Cell) -> RunRecord:
    """One independent cell; failures come back as a record with ``error`` set"""
    multiplier, cycles, seed = cell
    expected = 0
    try:
        spec = NetworkSpec.model_validate({**config.base.model_dump(), "width_multiplier": multiplier, "seed": seed})
        # exactly ``cycles`` cycles so the params column is a function of the cell
        pb = PBConfig.model_validate({**config.pb.model_dump(), "max_cycles": cycles, "stop_on_plateau": False})
        expected = predict_param_count(spec, cycles, pb)
        outcome = run_experiment(spec, dataset, pb, seed, record_timing=config.record_timing)
        record = outcome.record
        if record.params != expected:
            raise TrainingError(f"params {record.params} differ from closed form {expected}")
        return record
    except Exception as e:
        logger.error(f"❌ Sweep cell {run_id_for(*cell)} failed: {e}", exc_info=True)
        return RunRecord(run_id=run_id_for(*cell), seed=seed, width_multiplier=multiplier,
                         dendrite_cycles=cycles, params=expected, train_acc=0.0, val_acc=0.0,
                         test_acc=0.0, error=str(e) or type(e).__name__)


def _reference_baseline(points: List[RunRecord]) -> Optional[RunRecord]:
    undendrited = [p for p in points if p.dendrite_cycles == 0]
    if not undendrited:
        return None
    widest = max(p.width_multiplier for p in undendrited)
    rows = [p for p in undendrited if p.width_multiplier == widest]
    return rows[0].model_copy(update={
        "run_id": f"m{widest:g}-c0-mean",
        "train_acc": mean(p.train_acc for p in rows),
        "val_acc": mean(p.val_acc for p in rows),
        "test_acc": mean(p.test_acc for p in rows),
    })


def summarize(points: List[RunRecord]) -> Tuple[Optional[RunRecord], List[CompressionPoint]]:
    """Per width, the fewest-parameter dendrite cell whose mean val accuracy reaches the baseline"""
    baseline = _reference_baseline(points)
    if baseline is None:
        return None, []

    grouped: Dict[Tuple[float, int], List[RunRecord]] = {}
    for p in points:
        grouped.setdefault((p.width_multiplier, p.dendrite_cycles), []).append(p)

    compression: List[CompressionPoint] = []
    for multiplier in sorted({m for m, _ in grouped}, reverse=True):
        matches = []
        for (m, cycles), rows in grouped.items():
            if m != multiplier or cycles == 0:
                continue
            val = mean(r.val_acc for r in rows)
            if val >= baseline.val_acc:
                matches.append((rows[0].params, cycles, val))
        if not matches:
            continue
        params, cycles, val = min(matches)
        compression.append(CompressionPoint(
            width_multiplier=multiplier,
            dendrite_cycles=cycles,
            params=params,
            val_acc=val,
            reduction_pct=100.0 * (1.0 - params / baseline.params),
        ))
    return baseline, compression


def run_sweep(config: SweepConfig, dataset: Dataset, workers: Optional[int] = None) -> SweepResult:
    """
    Train every (multiplier, cycles, seed) cell independently

    Cells may run in a process pool; rows are merged in cell order so the
    result does not depend on scheduling.
    """
    cells = sweep_cells(config)
    workers = max(1, min(workers or config.workers, len(cells), os.cpu_count() or 1))
    logger.info(f"🧪 Sweep: {len(cells)} cells on {workers} worker(s)")

    if workers == 1:
        records = [_run_cell(config, dataset, cell) for cell in cells]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, config, dataset, cell) for cell in cells]
            records = [f.result() for f in futures]

    result = SweepResult()
    for record in records:
        (result.failures if record.error else result.points).append(record)
    result.baseline, result.compression = summarize(result.points)
    for point in result.compression:
        logger.info(f"🏆 m={point.width_multiplier:g} + {point.dendrite_cycles} cycles matches baseline "
                    f"with {point.params} params ({describe_param_change(point.reduction_pct)})")
    if result.failures:
        logger.warning(f"⚠️ {len(result.failures)} sweep cell(s) failed")
    return result


def write_sweep(result: SweepResult, output_dir: Union[str, Path]) -> Path:
    """sweep.csv always; sweep_failures.csv only when a cell failed"""
    output_dir = Path(output_dir)
    path = write_sweep_csv(result.points, output_dir / "sweep.csv")
    if result.failures:
        write_failures_csv(result.failures, output_dir / "sweep_failures.csv")
    return path
