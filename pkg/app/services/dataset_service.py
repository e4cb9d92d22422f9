"""
Dataset Service for synthetic benchmarks and IDX image files
"""

import csv
import gzip
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from app.engine.ops import one_hot
from app.engine.seeding import derive_seed, make_rng
from app.models.schemas import DatasetConfig, DatasetKind
from app.utils.exceptions import ConfigurationError, FormatError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
DEFAULT_FRACTIONS = (0.7, 0.15, 0.15)


@dataclass
class Dataset:
    """Features, integer labels and a seeded train/val/test partition"""
    X: np.ndarray
    Y: np.ndarray
    n_classes: int
    name: str = "dataset"
    train: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    val: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.X.shape[0]

    @property
    def features(self) -> int:
        return self.X.shape[1]

    @property
    def is_split(self) -> bool:
        return self.train.size > 0

    def targets(self, index: Optional[np.ndarray] = None) -> np.ndarray:
        labels = self.Y if index is None else self.Y[index]
        return one_hot(labels, self.n_classes)

    def split(self, seed: int, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> "Dataset":
        """Disjoint, exhaustive split from a seeded permutation"""
        if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigurationError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
        order = make_rng(seed).permutation(self.size)
        n_train = int(math.floor(fractions[0] * self.size))
        n_val = int(math.floor(fractions[1] * self.size))
        return replace(
            self,
            train=np.sort(order[:n_train]),
            val=np.sort(order[n_train:n_train + n_val]),
            test=np.sort(order[n_train + n_val:]),
        )


def gen_two_spirals(n_per_class: int, turns: float, noise_sigma: float, seed: int) -> Dataset:
    """Two interleaved spirals; class 1 is class 0 rotated by pi"""
    if n_per_class < 1 or turns <= 0 or noise_sigma < 0:
        raise ConfigurationError(
            f"two spirals needs n_per_class >= 1, turns > 0, noise >= 0 (got {n_per_class}, {turns}, {noise_sigma})"
        )
    rng = make_rng(seed)
    t = np.arange(n_per_class) / n_per_class
    r = 0.2 + 0.8 * t
    points, labels = [], []
    for k in (0, 1):
        theta = 2.0 * np.pi * turns * t + k * np.pi
        xy = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        if noise_sigma > 0:
            xy = xy + rng.normal(0.0, noise_sigma, size=xy.shape)
        points.append(xy)
        labels.append(np.full(n_per_class, k, dtype=np.int64))
    return Dataset(np.concatenate(points), np.concatenate(labels), 2, name="two_spirals")


def gen_blobs(n_per_class: int, n_classes: int, center_radius: float, sigma: float, seed: int) -> Dataset:
    """Gaussian blobs around centers equally spaced on a circle"""
    if n_classes < 2 or n_per_class < 1 or sigma < 0 or center_radius < 0:
        raise ConfigurationError(
            f"blobs needs n_classes >= 2, n_per_class >= 1, sigma >= 0 (got {n_classes}, {n_per_class}, {sigma})"
        )
    rng = make_rng(seed)
    points, labels = [], []
    for k in range(n_classes):
        angle = 2.0 * np.pi * k / n_classes
        center = center_radius * np.array([np.cos(angle), np.sin(angle)])
        xy = np.tile(center, (n_per_class, 1))
        if sigma > 0:
            xy = xy + rng.normal(0.0, sigma, size=xy.shape)
        points.append(xy)
        labels.append(np.full(n_per_class, k, dtype=np.int64))
    return Dataset(np.concatenate(points), np.concatenate(labels), n_classes, name="blobs")


# ========== IDX FILES ==========

def _open_binary(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except FileNotFoundError as e:
        raise FormatError(f"IDX file not found: {path}") from e


def _read_idx(path: Path, expected_magic: int) -> Tuple[Tuple[int, ...], bytes]:
    payload = _open_binary(path)
    if len(payload) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", payload[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    rank = magic & 0xFF
    header = 4 + 4 * rank
    if len(payload) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{rank}I", payload[4:header])
    needed = int(np.prod(dims))
    body = payload[header:]
    if len(body) < needed:
        raise FormatError(f"{path}: truncated payload ({len(body)} of {needed} bytes)")
    return dims, body[:needed]


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path]) -> Dataset:
    """IDX image/label pair; pixels scaled to [0, 1] and flattened row-major"""
    images_path, labels_path = Path(images_path), Path(labels_path)
    image_dims, image_bytes = _read_idx(images_path, IDX_IMAGES_MAGIC)
    label_dims, label_bytes = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if image_dims[0] != label_dims[0]:
        raise FormatError(f"{image_dims[0]} images but {label_dims[0]} labels")

    count = image_dims[0]
    pixels = np.frombuffer(image_bytes, dtype=np.uint8).astype(np.float64) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    n_classes = max(2, int(labels.max()) + 1) if count else 2
    logger.info(f"✅ Loaded {count} IDX images of shape {list(image_dims[1:])} from {images_path}")
    return Dataset(pixels.reshape(count, -1), labels, n_classes, name=images_path.stem)


def build_dataset(settings: DatasetConfig, seed: int) -> Dataset:
    """Generate or load the configured dataset and split it, with stage seeds derived from ``seed``"""
    if settings.kind == DatasetKind.TWO_SPIRALS:
        data = gen_two_spirals(settings.n_per_class, settings.turns, settings.noise_sigma,
                               derive_seed(seed, "data"))
    elif settings.kind == DatasetKind.BLOBS:
        data = gen_blobs(settings.n_per_class, settings.n_classes, settings.center_radius, settings.sigma,
                         derive_seed(seed, "data"))
    else:
        data = load_idx(settings.images_path, settings.labels_path)
    return data.split(derive_seed(seed, "split"), settings.fractions)


def write_dataset_csv(data: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    split_of = np.full(data.size, "", dtype=object)
    for name in ("train", "val", "test"):
        split_of[getattr(data, name)] = name
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(data.features)] + ["label", "split"])
        for row, label, split in zip(data.X, data.Y, split_of):
            writer.writerow([repr(float(v)) for v in row] + [int(label), split])
    return path
