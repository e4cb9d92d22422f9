"""
Pydantic models for configuration documents and result records
"""

from enum import Enum
from typing import Annotated, List, Optional, Tuple

from pydantic import AfterValidator, BaseModel, ConfigDict, Field, field_validator, model_validator


class LayerKind(str, Enum):
    """Enum for layer kinds"""
    FULLY_CONNECTED = "fully_connected"
    CONV2D = "conv2d"
    ACTIVATION = "activation"
    FLATTEN = "flatten"
    GLOBAL_AVG_POOL = "global_avg_pool"


class ActivationKind(str, Enum):
    """Enum for elementwise nonlinearities"""
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


class TaskKind(str, Enum):
    """Enum for task losses"""
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class Phase(str, Enum):
    """Enum for controller phases"""
    NORMAL_TRAINING = "NORMAL_TRAINING"
    DENDRITE_TRAINING = "DENDRITE_TRAINING"


class GroupSelector(str, Enum):
    """Enum for parameter group selectors"""
    MAIN = "main"
    DENDRITE_INPUT = "dendrite_input"
    DENDRITE_OUTPUT = "dendrite_output"


class DatasetKind(str, Enum):
    """Enum for dataset sources"""
    TWO_SPIRALS = "two_spirals"
    BLOBS = "blobs"
    IDX = "idx"


PARAMETRIC_KINDS = (LayerKind.FULLY_CONNECTED, LayerKind.CONV2D)


class LayerSpec(BaseModel):
    """One layer of a declarative network"""
    model_config = ConfigDict(extra="forbid")

    kind: LayerKind
    in_dim: Optional[int] = Field(default=None, gt=0)
    out_dim: Optional[int] = Field(default=None, gt=0)
    in_channels: Optional[int] = Field(default=None, gt=0)
    out_channels: Optional[int] = Field(default=None, gt=0)
    kernel: int = 3
    stride: int = Field(default=1, gt=0)
    padding: int = Field(default=1, ge=0)
    activation: Optional[ActivationKind] = None

    @field_validator("kernel")
    @classmethod
    def validate_kernel(cls, v):
        if v != 3:
            raise ValueError("only 3x3 kernels are supported")
        return v

    @model_validator(mode="after")
    def validate_kind_fields(self):
        if self.kind == LayerKind.FULLY_CONNECTED and self.out_dim is None:
            raise ValueError("fully_connected layers need out_dim")
        if self.kind == LayerKind.CONV2D and self.out_channels is None:
            raise ValueError("conv2d layers need out_channels")
        if self.kind == LayerKind.ACTIVATION and self.activation is None:
            raise ValueError("activation layers need an activation kind")
        return self

    @property
    def is_parametric(self) -> bool:
        return self.kind in PARAMETRIC_KINDS


class NetworkSpec(BaseModel):
    """Declarative architecture plus width multiplier and init seed"""
    model_config = ConfigDict(extra="forbid")

    input_shape: List[int] = Field(default_factory=lambda: [2], min_length=1)
    layers: List[LayerSpec] = Field(default_factory=lambda: NetworkSpec.mlp_layers([2, 16, 16, 2]))
    width_multiplier: float = Field(default=1.0, gt=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)

    @field_validator("input_shape")
    @classmethod
    def validate_input_shape(cls, v):
        if any(d <= 0 for d in v):
            raise ValueError("input_shape entries must be positive")
        if len(v) not in (1, 3):
            raise ValueError("input_shape must be [features] or [channels, height, width]")
        return v

    @staticmethod
    def mlp_layers(
        sizes: List[int],
        activation: ActivationKind = ActivationKind.TANH,
    ) -> List["LayerSpec"]:
        """Fully-connected stack with an activation between consecutive layers"""
        layers: List[LayerSpec] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if i > 0:
                layers.append(LayerSpec(kind=LayerKind.ACTIVATION, activation=activation))
            layers.append(LayerSpec(kind=LayerKind.FULLY_CONNECTED, in_dim=fan_in, out_dim=fan_out))
        return layers

    @classmethod
    def mlp(
        cls,
        sizes: List[int],
        activation: ActivationKind = ActivationKind.TANH,
        width_multiplier: float = 1.0,
        seed: int = 0,
    ) -> "NetworkSpec":
        return cls(
            input_shape=[sizes[0]],
            layers=cls.mlp_layers(sizes, activation),
            width_multiplier=width_multiplier,
            seed=seed,
        )


class PBConfig(BaseModel):
    """Knobs of the alternating-phase controller"""
    model_config = ConfigDict(extra="forbid")

    pool_size: int = Field(default=4, ge=1)
    candidate_epochs: int = Field(default=100, ge=1)
    max_normal_epochs: int = Field(default=300, ge=1)
    normal_patience: int = Field(default=10, ge=1)
    dendrite_patience: int = Field(default=10, ge=1)
    improvement_epsilon: float = Field(default=1e-4, ge=0.0)
    candidate_tolerance: float = Field(default=1e-4, ge=0.0)
    loss_tolerance: float = Field(default=1e-3, ge=0.0)
    max_cycles: int = Field(default=3, ge=0)
    lr_main: float = Field(default=0.05, gt=0.0)
    lr_candidate: float = Field(default=0.01, gt=0.0)
    batch_size: int = Field(default=32, ge=1)
    cascade_dendrites: bool = True
    target_layers: Optional[List[int]] = None
    dendrite_activation: Optional[ActivationKind] = None
    stop_on_plateau: bool = True
    task: TaskKind = TaskKind.CLASSIFICATION


class DatasetConfig(BaseModel):
    """Dataset selection for the CLI"""
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind = DatasetKind.TWO_SPIRALS
    n_per_class: int = Field(default=500, ge=1)
    turns: float = Field(default=1.75, gt=0.0)
    noise_sigma: float = Field(default=0.05, ge=0.0)
    n_classes: int = Field(default=3, ge=2)
    center_radius: float = Field(default=3.0, ge=0.0)
    sigma: float = Field(default=0.5, ge=0.0)
    images_path: Optional[str] = None
    labels_path: Optional[str] = None
    fractions: Tuple[float, float, float] = (0.7, 0.15, 0.15)

    @field_validator("fractions")
    @classmethod
    def validate_fractions(cls, v):
        if any(f < 0 for f in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")
        return v

    @model_validator(mode="after")
    def validate_idx_paths(self):
        if self.kind == DatasetKind.IDX and (not self.images_path or not self.labels_path):
            raise ValueError("idx datasets need images_path and labels_path")
        return self


def check_multipliers(v: List[float]) -> List[float]:
    if any(m <= 0 or m > 1 for m in v):
        raise ValueError("width multipliers must lie in (0, 1]")
    return v


def check_cycle_counts(v: List[int]) -> List[int]:
    if any(c < 0 for c in v):
        raise ValueError("dendrite cycle counts must be non-negative")
    return v


WidthMultipliers = Annotated[List[float], AfterValidator(check_multipliers)]
CycleCounts = Annotated[List[int], AfterValidator(check_cycle_counts)]


class SweepSettings(BaseModel):
    """Grid of the compression sweep"""
    model_config = ConfigDict(extra="forbid")

    width_multipliers: WidthMultipliers = Field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125], min_length=1)
    dendrite_cycles: CycleCounts = Field(default_factory=lambda: [0, 1, 2, 3], min_length=1)
    seeds: Optional[List[int]] = None
    workers: int = Field(default=1, ge=1)


class SweepConfig(BaseModel):
    """Everything a sweep needs: base architecture, grid, seeds and PB knobs"""
    model_config = ConfigDict(extra="forbid")

    base: NetworkSpec = Field(default_factory=NetworkSpec)
    width_multipliers: WidthMultipliers = Field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125], min_length=1)
    dendrite_cycles: CycleCounts = Field(default_factory=lambda: [0, 1, 2, 3], min_length=1)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    pb: PBConfig = Field(default_factory=PBConfig)
    workers: int = Field(default=1, ge=1)
    record_timing: bool = False


class BenchSettings(BaseModel):
    """Throughput benchmark settings"""
    model_config = ConfigDict(extra="forbid")

    batch_sizes: List[int] = Field(default_factory=lambda: [1, 8, 32, 128, 512], min_length=1)
    min_duration_s: float = Field(default=0.5, ge=0.5)
    threads: int = Field(default=1, ge=1)
    width_multipliers: WidthMultipliers = Field(default_factory=lambda: [1.0, 0.125], min_length=1)
    hourly_cost_usd: Optional[float] = Field(default=None, gt=0.0)
    instance_label: str = "local"

    @field_validator("batch_sizes")
    @classmethod
    def validate_batch_sizes(cls, v):
        if any(b <= 0 for b in v):
            raise ValueError("batch sizes must be positive")
        if any(b2 <= b1 for b1, b2 in zip(v, v[1:])):
            raise ValueError("batch sizes must be strictly increasing")
        return v


class RunConfig(BaseModel):
    """Top-level document read by the CLI"""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=7, ge=0)
    output_dir: str = "runs"
    record_timing: bool = False
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    pb: PBConfig = Field(default_factory=PBConfig)
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    bench: BenchSettings = Field(default_factory=BenchSettings)

    def sweep_config(self) -> SweepConfig:
        return SweepConfig(
            base=self.network,
            width_multipliers=self.sweep.width_multipliers,
            dendrite_cycles=self.sweep.dendrite_cycles,
            seeds=self.sweep.seeds or [self.seed],
            pb=self.pb,
            workers=self.sweep.workers,
            record_timing=self.record_timing,
        )


class EpochRecord(BaseModel):
    """One row of the training report"""
    cycle: int
    phase: Phase
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    params: int
    wall_time_s: float = 0.0


class TrainReport(BaseModel):
    """Trajectory and outcome of one pb_train call"""
    epochs: List[EpochRecord] = Field(default_factory=list)
    cycles_completed: int = 0
    final_params: int = 0
    best_val_acc: float = 0.0
    best_train_acc: float = 0.0
    test_acc: Optional[float] = None
    stopped_reason: str = ""


class RunRecord(BaseModel):
    """One experiment's metrics and parameter count"""
    run_id: str
    seed: int
    width_multiplier: float
    dendrite_cycles: int
    params: int
    train_acc: float
    val_acc: float
    test_acc: float
    wall_time_s: float = 0.0
    error: Optional[str] = None


SweepPoint = RunRecord


class CostModel(BaseModel):
    """Hourly cost and throughput of one deployment"""
    hourly_cost_usd: float = Field(gt=0.0)
    throughput: float = Field(gt=0.0)
    instance_label: str = ""
    experiment: str = ""
    total_params: Optional[int] = None
    optimal_batch: Optional[int] = None


class BenchRow(BaseModel):
    """Measured throughput at one batch size"""
    batch_size: int
    units_per_s: float = Field(ge=0.0)
    wall_time_s: float
    iterations: int = 0
    error: Optional[str] = None


class BenchResult(BaseModel):
    """Batch-size sweep of forward throughput"""
    label: str = ""
    params: int = 0
    threads: int = 1
    rows: List[BenchRow] = Field(default_factory=list)

    @property
    def optimal_batch(self) -> Optional[int]:
        measured = [r for r in self.rows if r.error is None]
        if not measured:
            return None
        return max(measured, key=lambda r: r.units_per_s).batch_size

    @property
    def best_units_per_s(self) -> float:
        return max((r.units_per_s for r in self.rows if r.error is None), default=0.0)
