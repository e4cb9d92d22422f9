"""
Bench Service for forward-pass throughput across batch sizes
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from app.engine.seeding import derive_seed, make_rng
from app.engine.tensor import no_grad
from app.models.schemas import BenchResult, BenchRow
from app.network.graph import ModelGraph, count_params, forward
from app.utils.exceptions import UsageError

logger = logging.getLogger(__name__)

MIN_DURATION_S = 0.5


def _forward_once(model: ModelGraph, batch: np.ndarray) -> None:
    with no_grad():
        forward(model, batch)


def _measure(model: ModelGraph, batch: np.ndarray, min_duration_s: float,
             pool: Optional[ThreadPoolExecutor], threads: int) -> BenchRow:
    def run() -> None:
        if pool is None:
            _forward_once(model, batch)
        else:
            list(pool.map(lambda _: _forward_once(model, batch), range(threads)))

    run()  # warm-up, not timed
    iterations = 0
    start = time.perf_counter()
    elapsed = 0.0
    while elapsed < min_duration_s:
        run()
        iterations += 1
        elapsed = time.perf_counter() - start
    units = batch.shape[0] * iterations * (threads if pool is not None else 1)
    return BenchRow(batch_size=batch.shape[0], units_per_s=units / elapsed,
                    wall_time_s=elapsed, iterations=iterations)


def bench_throughput(
    model: ModelGraph,
    batch_sizes: Sequence[int],
    min_duration_s: float = MIN_DURATION_S,
    threads: int = 1,
    seed: int = 0,
    label: str = "",
) -> BenchResult:
    """
    Repeated forward passes per batch size until ``min_duration_s`` elapses

    With ``threads > 1`` every iteration runs that many concurrent passes over
    the same read-only model. A failing batch size is recorded and skipped.
    """
    if min_duration_s < MIN_DURATION_S:
        raise UsageError(f"min_duration_s must be at least {MIN_DURATION_S}, got {min_duration_s}")
    if any(b <= 0 for b in batch_sizes) or any(b2 <= b1 for b1, b2 in zip(batch_sizes, batch_sizes[1:])):
        raise UsageError(f"batch sizes must be positive and strictly increasing, got {list(batch_sizes)}")
    if threads < 1:
        raise UsageError(f"threads must be >= 1, got {threads}")

    rng = make_rng(derive_seed(seed, "bench"))
    result = BenchResult(label=label, params=count_params(model), threads=threads)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for size in batch_sizes:
            batch = rng.standard_normal((size,) + model.input_shape)
            try:
                row = _measure(model, batch, min_duration_s, pool, threads)
            except Exception as e:
                logger.warning(f"⚠️ Batch size {size} failed: {e}")
                row = BenchRow(batch_size=size, units_per_s=0.0, wall_time_s=0.0, error=str(e))
            else:
                logger.info(f"📊 {label or 'model'} batch {size}: {row.units_per_s:,.0f} units/s "
                            f"({row.iterations} iterations)")
            result.rows.append(row)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    return result
