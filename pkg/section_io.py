from __future__ import annotations

import csv
import logging
import struct
from pathlib import Path
from typing import Type, Union

import numpy as np

from errors import ExtentMismatchError, SectionFormatError, SectionTruncatedError
from seismic_data import S, Section, SeismicSection
from tensor import Tensor


logger = logging.getLogger(__name__)

# SEIS1 layout (all little-endian):
#   b"SEIS1"
#   u32 n_traces, u32 n_samples, f32 trace_spacing_m, f32 sample_interval
#   n_traces * n_samples f32 values, trace-major
MAGIC = b"SEIS1"
_HEADER = struct.Struct("<IIff")
HEADER_SIZE = len(MAGIC) + _HEADER.size
_VALUE_DTYPE = np.dtype("<f4")

PathLike = Union[str, Path]


def encode_section(section: Section) -> bytes:
    header = _HEADER.pack(
        section.n_traces,
        section.n_samples,
        section.trace_spacing_m,
        section.sample_interval,
    )
    body = np.ascontiguousarray(section.values.data, dtype=_VALUE_DTYPE).tobytes()
    return MAGIC + header + body


def decode_section(payload: bytes, kind: Type[S] = SeismicSection) -> S:  # type: ignore[assignment]
    if 0 < len(payload) < len(MAGIC) and MAGIC.startswith(payload):
        raise SectionTruncatedError(
            f"SEIS1 magic truncated: {len(payload)} of {len(MAGIC)} bytes"
        )
    if payload[: len(MAGIC)] != MAGIC:
        raise SectionFormatError("not a SEIS1 file (bad magic)")
    if len(payload) < HEADER_SIZE:
        raise SectionTruncatedError(
            f"SEIS1 header truncated: {len(payload)} of {HEADER_SIZE} bytes"
        )
    n_traces, n_samples, spacing, interval = _HEADER.unpack_from(payload, len(MAGIC))
    if n_traces == 0 or n_samples == 0:
        raise ExtentMismatchError(f"SEIS1 header has empty extents {n_traces}x{n_samples}")
    expected = HEADER_SIZE + n_traces * n_samples * _VALUE_DTYPE.itemsize
    if len(payload) < expected:
        raise SectionTruncatedError(
            f"SEIS1 body truncated: {len(payload)} of {expected} bytes "
            f"for {n_traces}x{n_samples}"
        )
    if len(payload) > expected:
        raise ExtentMismatchError(
            f"SEIS1 file has {len(payload) - expected} bytes beyond {n_traces}x{n_samples}"
        )
    values = np.frombuffer(payload, dtype=_VALUE_DTYPE, offset=HEADER_SIZE)
    grid = values.astype(np.float64).reshape(n_traces, n_samples)
    return kind(
        values=Tensor.adopt(grid),
        trace_spacing_m=float(spacing),
        sample_interval=float(interval),
    )


def write_section(path: PathLike, section: Section) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_section(section))
    logger.info("Wrote %dx%d section to %s", section.n_traces, section.n_samples, target)
    return target


def read_section(path: PathLike, kind: Type[S] = SeismicSection) -> S:  # type: ignore[assignment]
    """Load a SEIS1 file as ``kind`` (SeismicSection by default)."""
    source = Path(path)
    section = decode_section(source.read_bytes(), kind)
    logger.info("Read %dx%d section from %s", section.n_traces, section.n_samples, source)
    return section


def write_section_csv(path: PathLike, section: Section) -> Path:
    """One row per trace, samples as columns."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for trace in section.values.data:
            writer.writerow([repr(float(x)) for x in trace])
    logger.info("Wrote section CSV to %s", target)
    return target


__all__ = [
    "MAGIC",
    "HEADER_SIZE",
    "encode_section",
    "decode_section",
    "write_section",
    "read_section",
    "write_section_csv",
]
