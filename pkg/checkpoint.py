from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from pydantic import ValidationError

from errors import (
    CheckpointFormatError,
    CheckpointVersionError,
    NonFiniteError,
    ShapeError,
    ZeroVarianceError,
)
from seismic_data import NormStats
from tcn import ModelParams, TcnConfig, params_from_tensors
from tensor import Tensor


logger = logging.getLogger(__name__)

# Checkpoint layout (little-endian):
#   b"TCNCKPT"                       magic
#   u8   version                     (CHECKPOINT_VERSION)
#   u32  config_len, config_len bytes of TcnConfig JSON (utf-8)
#   u32  n_tensors, then per tensor: u8 rank, rank * u32 extents, f64 values
#        (tensors in ModelParams.tensors() order)
#   4 * f64 seismic_mean, seismic_std, ai_mean, ai_std
#   u32  n_provenance, n_provenance * u32 training trace indices
#   u32  n_history, n_history * f64 per-epoch loss
#   u64  seed
MAGIC = b"TCNCKPT"
CHECKPOINT_VERSION = 1
SUPPORTED_VERSIONS = (CHECKPOINT_VERSION,)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Checkpoint:
    config: TcnConfig
    params: ModelParams
    stats: NormStats
    history: Tuple[float, ...] = ()
    seed: int = 0
    version: int = field(default=CHECKPOINT_VERSION)


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self._payload = payload
        self._pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._payload):
            raise CheckpointFormatError(
                f"checkpoint ends at byte {len(self._payload)}, needed {self._pos + n}"
            )
        chunk = self._payload[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        spec = struct.Struct(fmt)
        return spec.unpack(self.take(spec.size))

    def array(self, dtype: str, count: int) -> np.ndarray:
        item = np.dtype(dtype)
        return np.frombuffer(self.take(count * item.itemsize), dtype=item).copy()

    def done(self) -> None:
        if self._pos != len(self._payload):
            raise CheckpointFormatError(
                f"{len(self._payload) - self._pos} unexpected trailing bytes in checkpoint"
            )


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    parts: List[bytes] = [MAGIC, struct.pack("<B", ckpt.version)]
    config_json = ckpt.config.model_dump_json().encode("utf-8")
    parts.append(struct.pack("<I", len(config_json)))
    parts.append(config_json)

    tensors = ckpt.params.tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for t in tensors:
        parts.append(struct.pack("<B", t.rank))
        parts.append(struct.pack(f"<{t.rank}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())

    stats = ckpt.stats
    parts.append(
        struct.pack("<4d", stats.seismic_mean, stats.seismic_std, stats.ai_mean, stats.ai_std)
    )
    parts.append(struct.pack("<I", len(stats.provenance)))
    parts.append(np.asarray(stats.provenance, dtype="<u4").tobytes())
    parts.append(struct.pack("<I", len(ckpt.history)))
    parts.append(np.asarray(ckpt.history, dtype="<f8").tobytes())
    parts.append(struct.pack("<Q", ckpt.seed))
    return b"".join(parts)


def decode_checkpoint(payload: bytes) -> Checkpoint:
    reader = _Reader(payload)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    (version,) = reader.unpack("<B")
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointVersionError(
            f"checkpoint version {version} is not supported (known: {SUPPORTED_VERSIONS})"
        )
    (config_len,) = reader.unpack("<I")
    try:
        config = TcnConfig.model_validate_json(reader.take(config_len))
    except ValidationError as exc:
        raise CheckpointFormatError(f"checkpoint config block is invalid: {exc}") from exc

    (n_tensors,) = reader.unpack("<I")
    tensors: List[Tensor] = []
    for _ in range(n_tensors):
        (rank,) = reader.unpack("<B")
        if not 1 <= rank <= 3:
            raise CheckpointFormatError(f"tensor rank {rank} out of range")
        shape = reader.unpack(f"<{rank}I")
        values = reader.array("<f8", int(np.prod(shape)))
        try:
            tensors.append(Tensor.adopt(values.astype(np.float64).reshape(shape)))
        except (ShapeError, NonFiniteError) as exc:
            raise CheckpointFormatError(f"corrupt parameter tensor: {exc}") from exc
    try:
        params = params_from_tensors(config, tensors)
    except ShapeError as exc:
        raise CheckpointFormatError(f"parameter tensors do not match config: {exc}") from exc

    seismic_mean, seismic_std, ai_mean, ai_std = reader.unpack("<4d")
    (n_prov,) = reader.unpack("<I")
    provenance = tuple(int(i) for i in reader.array("<u4", n_prov))
    (n_history,) = reader.unpack("<I")
    history = tuple(float(x) for x in reader.array("<f8", n_history))
    (seed,) = reader.unpack("<Q")
    reader.done()

    try:
        stats = NormStats(
            seismic_mean=seismic_mean,
            seismic_std=seismic_std,
            ai_mean=ai_mean,
            ai_std=ai_std,
            provenance=provenance,
        )
    except ZeroVarianceError as exc:
        raise CheckpointFormatError(f"checkpoint stats block is invalid: {exc}") from exc

    return Checkpoint(
        config=config,
        params=params,
        stats=stats,
        history=history,
        seed=int(seed),
        version=version,
    )


def save_checkpoint(path: PathLike, ckpt: Checkpoint) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_checkpoint(ckpt))
    logger.info(
        "Saved checkpoint (%d parameters, %d epochs) to %s",
        ckpt.params.parameter_count,
        len(ckpt.history),
        target,
    )
    return target


def load_checkpoint(path: PathLike) -> Checkpoint:
    source = Path(path)
    ckpt = decode_checkpoint(source.read_bytes())
    logger.info("Loaded checkpoint v%d from %s", ckpt.version, source)
    return ckpt


__all__ = [
    "MAGIC",
    "CHECKPOINT_VERSION",
    "Checkpoint",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]
