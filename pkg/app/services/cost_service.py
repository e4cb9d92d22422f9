"""
Cost Service for deployment economics: cost per billion units, speedups and replica planning
"""

import logging
import math
from decimal import ROUND_HALF_EVEN, Decimal
from typing import List, Optional

from app.models.schemas import BenchResult, CostModel
from app.utils.exceptions import DomainError

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600
UNITS_PER_BILLION = 1e9

# Reference instance/model rows for the cost table; calculator inputs, not measurements
REFERENCE_DEPLOYMENTS: List[CostModel] = [
    CostModel(instance_label="n1-standard-2 (T4 GPU)", hourly_cost_usd=0.31, experiment="Original Model",
              total_params=4_380_000, throughput=1_581_885, optimal_batch=3072),
    CostModel(instance_label="n1-standard-2 (T4 GPU)", hourly_cost_usd=0.31, experiment="Reduced Model with Dendrites",
              total_params=496_000, throughput=59_604_227, optimal_batch=86016),
    CostModel(instance_label="c2-standard-4 (CPU)", hourly_cost_usd=0.17, experiment="Original Model",
              total_params=4_380_000, throughput=107_001, optimal_batch=32),
    CostModel(instance_label="c2-standard-4 (CPU)", hourly_cost_usd=0.17, experiment="Reduced Model with Dendrites",
              total_params=496_000, throughput=16_319_841, optimal_batch=768),
]


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if value is None or not math.isfinite(value) or value <= 0:
            raise DomainError(f"{name} must be positive, got {value}")


def cost_per_billion(hourly_cost_usd: float, units_per_s: float) -> float:
    """USD to process 1e9 units at the given hourly price and throughput"""
    _require_positive(hourly_cost_usd=hourly_cost_usd, units_per_s=units_per_s)
    return hourly_cost_usd / (units_per_s * SECONDS_PER_HOUR) * UNITS_PER_BILLION


def speedup(tps_new: float, tps_old: float) -> float:
    _require_positive(tps_new=tps_new, tps_old=tps_old)
    return tps_new / tps_old


def required_replicas(target_units_per_s: float, per_instance_units_per_s: float) -> int:
    """Instances needed to sustain a target throughput"""
    _require_positive(target_units_per_s=target_units_per_s, per_instance_units_per_s=per_instance_units_per_s)
    return int(math.ceil(target_units_per_s / per_instance_units_per_s))


def format_usd(value: float, digits: int = 4) -> str:
    """Fixed-point with half-even rounding on the decimal expansion of the float"""
    quantum = Decimal(1).scaleb(-digits)
    return str(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_EVEN))


def cost_model_cost(model: CostModel) -> float:
    return cost_per_billion(model.hourly_cost_usd, model.throughput)


def cost_model_from_bench(
    bench: BenchResult,
    hourly_cost_usd: float,
    instance_label: str = "local",
    experiment: Optional[str] = None,
) -> CostModel:
    """Price a measured benchmark at its best batch size"""
    if bench.best_units_per_s <= 0:
        raise DomainError(f"benchmark {bench.label!r} has no successful measurement")
    return CostModel(
        hourly_cost_usd=hourly_cost_usd,
        throughput=bench.best_units_per_s,
        instance_label=instance_label,
        experiment=experiment or bench.label,
        total_params=bench.params,
        optimal_batch=bench.optimal_batch,
    )
