"""
PBW1 weight files

Layout (little-endian):
    b"PBW1"
    per group: u32 name length, UTF-8 name, u32 rank, u32 dims..., float64 values
    u32 CRC32 of every preceding byte

Each dendrite block adds one settings group ``layer<L>.dendrites`` holding
[activation index, cascade flag] so a reload rebuilds the same nonlinearity.
"""

import logging
import os
import re
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from app.models.schemas import ActivationKind, NetworkSpec, PBConfig
from app.network.builder import select_target_layers
from app.network.graph import ModelGraph, build_network
from app.network.parameters import GroupRole, ParameterGroup
from app.pb.candidates import dendrite_activation
from app.pb.dendrites import DendriteBlock, DendriteCycle
from app.utils.exceptions import FormatError

logger = logging.getLogger(__name__)

MAGIC = b"PBW1"
PathLike = Union[str, Path]
DENDRITE_GROUP = re.compile(r"layer(\d+)\.dendrite(\d+)\.(input_weight|cascade_weight|input_bias|output_weight)")
BLOCK_SETTINGS = re.compile(r"layer(\d+)\.dendrites")
ACTIVATIONS = tuple(ActivationKind)


def _block_settings(block: DendriteBlock) -> np.ndarray:
    return np.array([ACTIVATIONS.index(block.activation), float(block.cascade)], dtype=np.float64)


def _parse_settings(name: str, values: np.ndarray) -> Tuple[ActivationKind, bool]:
    index = float(values[0]) if values.shape == (2,) else -1.0
    if not index.is_integer() or not 0 <= index < len(ACTIVATIONS):
        raise FormatError(f"{name}: unreadable dendrite settings {values.tolist()}")
    return ACTIVATIONS[int(index)], bool(values[1])


def _pack(parts: list, name: str, values: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    values = np.ascontiguousarray(values, dtype="<f8")
    parts.append(struct.pack("<I", len(encoded)))
    parts.append(encoded)
    parts.append(struct.pack("<I", values.ndim))
    parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
    parts.append(values.tobytes())


def encode_weights(model: ModelGraph) -> bytes:
    parts = [MAGIC]
    for name, group in model.groups.items():
        _pack(parts, name, group.values)
    for layer_id in sorted(model.dendrites):
        _pack(parts, f"layer{layer_id}.dendrites", _block_settings(model.dendrites[layer_id]))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_weights(payload: bytes) -> Dict[str, np.ndarray]:
    if len(payload) < len(MAGIC) + 4 or payload[:4] != MAGIC:
        raise FormatError(f"not a PBW1 weight file (magic {payload[:4]!r})")
    body, (stored_crc,) = payload[:-4], struct.unpack("<I", payload[-4:])
    if zlib.crc32(body) != stored_crc:
        raise FormatError("weight file checksum mismatch")

    tensors: Dict[str, np.ndarray] = {}
    offset = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(body):
            raise FormatError("weight file truncated")
        chunk = body[offset:offset + n]
        offset += n
        return chunk

    while offset < len(body):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError("weight file holds a non UTF-8 group name") from e
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        count = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims)
        tensors[name] = values.astype(np.float64)
    return tensors


def split_settings(tensors: Dict[str, np.ndarray]) -> Tuple[Dict[str, np.ndarray], Dict[int, Tuple[ActivationKind, bool]]]:
    """Separate parameter groups from per-block dendrite settings"""
    params: Dict[str, np.ndarray] = {}
    settings: Dict[int, Tuple[ActivationKind, bool]] = {}
    for name, values in tensors.items():
        match = BLOCK_SETTINGS.fullmatch(name)
        if match:
            settings[int(match.group(1))] = _parse_settings(name, values)
        else:
            params[name] = values
    return params, settings


def save_weights(model: ModelGraph, path: PathLike) -> None:
    """Write through a sibling temp file and rename, so readers never see a partial file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(encode_weights(model))
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug(f"Saved {len(model.groups)} parameter groups to {path}")


def load_weights(model: ModelGraph, path: PathLike) -> None:
    """Restore every group; on any mismatch the model is left untouched"""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except FileNotFoundError as e:
        raise FormatError(f"weight file not found: {path}") from e
    tensors, settings = split_settings(decode_weights(payload))

    missing = set(model.groups) - set(tensors)
    extra = set(tensors) - set(model.groups)
    if missing or extra:
        raise FormatError(f"weight file groups differ from model (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, group in model.groups.items():
        if tensors[name].shape != group.shape:
            raise FormatError(f"group {name}: file shape {tensors[name].shape} != model shape {group.shape}")
    for layer_id, (activation, cascade) in settings.items():
        block = model.dendrites.get(layer_id)
        if block is None or (block.activation, block.cascade) != (activation, cascade):
            raise FormatError(f"layer {layer_id}: file dendrites are {activation.value}/cascade={cascade}, "
                              f"model has {'none' if block is None else f'{block.activation.value}/cascade={block.cascade}'}")

    for name, group in model.groups.items():
        group.assign(tensors[name])
    logger.debug(f"Loaded {len(tensors)} parameter groups from {path}")


def _restore_dendrites(model: ModelGraph, tensors: Dict[str, np.ndarray], config: PBConfig) -> None:
    params, settings = split_settings(tensors)
    found: Dict[int, Dict[int, Dict[str, np.ndarray]]] = {}
    for name, values in params.items():
        match = DENDRITE_GROUP.fullmatch(name)
        if match:
            layer, cycle, part = int(match.group(1)), int(match.group(2)), match.group(3)
            found.setdefault(layer, {}).setdefault(cycle, {})[part] = values

    for layer_id in sorted(found):
        if layer_id not in select_target_layers(model.layers, None):
            raise FormatError(f"weight file has dendrites on layer {layer_id}, which cannot host them")
        cycles = found[layer_id]
        if sorted(cycles) != list(range(len(cycles))):
            raise FormatError(f"layer {layer_id} dendrite cycles are not contiguous: {sorted(cycles)}")
        host = model.layer(layer_id)
        # files without a settings group fall back to the caller's config
        activation, cascade = settings.get(layer_id, (
            dendrite_activation(model, layer_id, config),
            any("cascade_weight" in parts for parts in cycles.values()) or config.cascade_dendrites,
        ))
        block = DendriteBlock(
            layer_id=layer_id,
            n_neurons=host.out_features,
            n_inputs=host.presynaptic_inputs,
            activation=activation,
            cascade=cascade,
        )
        for c in range(len(cycles)):
            parts = cycles[c]
            missing = {"input_weight", "input_bias", "output_weight"} - set(parts)
            if missing:
                raise FormatError(f"layer {layer_id} dendrite {c} lacks {sorted(missing)}")
            prefix = f"layer{layer_id}.dendrite{c}"

            def locked(part: str) -> ParameterGroup:
                return ParameterGroup.create(f"{prefix}.{part}", layer_id, GroupRole.DENDRITE_INPUT,
                                             parts[part], trainable=False, locked=True)

            cycle = DendriteCycle(
                index=c,
                input_weight=locked("input_weight"),
                input_bias=locked("input_bias"),
                output_weight=ParameterGroup.create(f"{prefix}.output_weight", layer_id,
                                                    GroupRole.DENDRITE_OUTPUT, parts["output_weight"]),
                cascade_weight=locked("cascade_weight") if "cascade_weight" in parts else None,
            )
            for group in cycle.groups():
                model.register(group)
            block.cycles.append(cycle)
        model.dendrites[layer_id] = block


def load_model(spec: NetworkSpec, path: PathLike, config: Optional[PBConfig] = None) -> ModelGraph:
    """Build ``spec``, re-create the dendrites named in the file, then load every value"""
    path = Path(path)
    try:
        tensors = decode_weights(path.read_bytes())
    except FileNotFoundError as e:
        raise FormatError(f"weight file not found: {path}") from e
    model = build_network(spec)
    _restore_dendrites(model, tensors, config or PBConfig())
    load_weights(model, path)
    return model
