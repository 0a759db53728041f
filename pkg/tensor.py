from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence, Tuple

import numpy as np

from errors import NonFiniteError, ShapeError


Shape = Tuple[int, ...]

MAX_RANK = 3


def _check_shape(shape: Sequence[int]) -> Shape:
    dims = tuple(int(n) for n in shape)
    if not 1 <= len(dims) <= MAX_RANK:
        raise ShapeError(f"rank must be between 1 and {MAX_RANK}, got shape {dims}")
    if any(n < 1 for n in dims):
        raise ShapeError(f"empty extent in shape {dims}")
    return dims


class Tensor:
    """
    Dense float64 array of rank 1 to 3, immutable after construction.

    The wrapped array is contiguous, row-major and read-only. Construction
    rejects NaN/Inf so non-finite values surface where they are produced.
    """

    __slots__ = ("_data",)

    def __init__(self, values: object, shape: Sequence[int] | None = None) -> None:
        arr = np.array(values, dtype=np.float64, copy=True)
        if shape is not None:
            dims = _check_shape(shape)
            if arr.size != math.prod(dims):
                raise ShapeError(f"{arr.size} values do not fill shape {dims}")
            arr = arr.reshape(dims)
        self._data = _freeze(arr)

    @classmethod
    def adopt(cls, arr: np.ndarray) -> "Tensor":
        """
        Wrap a freshly computed array without copying it.

        The caller hands over ownership: the array is made read-only.
        """
        out = cls.__new__(cls)
        out._data = _freeze(np.ascontiguousarray(arr, dtype=np.float64))
        return out

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Shape:
        return self._data.shape

    @property
    def rank(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def at(self, *index: int) -> float:
        return float(self._data[index])

    def with_value(self, index: Sequence[int], value: float) -> "Tensor":
        arr = self._data.copy()
        arr[tuple(index)] = value
        return Tensor.adopt(arr)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        dims = _check_shape(shape)
        if math.prod(dims) != self.size:
            raise ShapeError(f"cannot reshape {self.shape} into {dims}")
        return Tensor.adopt(self._data.reshape(dims).copy())

    def tolist(self) -> list:
        return self._data.tolist()

    def __array__(self, dtype=None, copy=None) -> np.ndarray:
        if dtype is not None and np.dtype(dtype) != self._data.dtype:
            return self._data.astype(dtype)
        return self._data

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)})"


def _freeze(arr: np.ndarray) -> np.ndarray:
    _check_shape(arr.shape)
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major linear position of ``index`` inside ``shape``."""
    dims = _check_shape(shape)
    if len(index) != len(dims):
        raise ShapeError(f"index {tuple(index)} does not match rank of {dims}")
    pos = 0
    for extent, i in zip(dims, index):
        if not 0 <= i < extent:
            raise ShapeError(f"index {tuple(index)} out of range for {dims}")
        pos = pos * extent + i
    return pos


# ---------------------------------------------------------------------
# Seeded randomness
# ---------------------------------------------------------------------


class Rng:
    """
    Single-owner random stream.

    Algorithm: numpy's PCG64 bit generator (PCG XSL-RR 128/64), seeded through
    ``SeedSequence(seed, spawn_key=(stream,))``. This is the fixed, named
    algorithm of the engine and stands in place of a splitmix64-seeded
    xoshiro generator; seeded checkpoints and tests assume it. Uniform
    doubles take the top 53 bits of each raw 64-bit output; Gaussian draws
    use Box-Muller on pairs of those doubles. Equal (seed, stream) pairs give
    equal streams on every platform.
    """

    def __init__(self, seed: int, stream: int = 0) -> None:
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = int(seed)
        self.stream = int(stream)
        self._bits = np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(self.stream,)))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        if n <= 0:
            return np.empty(0, dtype=np.float64)
        raw = self._bits.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if n <= 0:
            return np.empty(0, dtype=np.float64)
        pairs = (n + 1) // 2
        u1 = 1.0 - self.uniform(pairs)
        u2 = self.uniform(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
        return mean + std * z

    def integers(self, low: int, high: int, n: int = 1) -> np.ndarray:
        """``n`` integers drawn uniformly from [low, high]."""
        if high < low:
            raise ValueError(f"empty integer range [{low}, {high}]")
        span = high - low + 1
        return low + np.minimum((self.uniform(n) * span).astype(np.int64), span - 1)


# ---------------------------------------------------------------------
# Constructors and helpers
# ---------------------------------------------------------------------


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor.adopt(np.zeros(_check_shape(shape), dtype=np.float64))


def randn(shape: Sequence[int], rng: Rng, mean: float = 0.0, std: float = 1.0) -> Tensor:
    dims = _check_shape(shape)
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    draws = rng.normal(math.prod(dims), mean, std)
    return Tensor.adopt(draws.reshape(dims))


def reduce_mean(t: Tensor) -> float:
    return float(np.mean(t.data))


def map_tensor(t: Tensor, fn: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    """Apply an elementwise numpy function; the result keeps ``t``'s shape."""
    out = np.asarray(fn(t.data), dtype=np.float64)
    if out.shape != t.shape:
        raise ShapeError(f"mapped shape {out.shape} differs from {t.shape}")
    return Tensor.adopt(np.array(out, copy=True))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}")
    return Tensor.adopt(a.data + b.data)


def take_rows(t: Tensor, indices: Sequence[int]) -> Tensor:
    if not len(indices):
        raise ShapeError("take_rows() needs at least one index")
    return Tensor.adopt(t.data[list(indices)].copy())


def stack(tensors: Iterable[Tensor]) -> Tensor:
    """Assemble equal-shaped tensors along a new leading axis."""
    items = list(tensors)
    if not items:
        raise ShapeError("stack() needs at least one tensor")
    first = items[0].shape
    for item in items[1:]:
        if item.shape != first:
            raise ShapeError(f"cannot stack {item.shape} with {first}")
    return Tensor.adopt(np.stack([item.data for item in items]))


__all__ = [
    "Tensor",
    "Rng",
    "flat_index",
    "zeros",
    "randn",
    "reduce_mean",
    "map_tensor",
    "add",
    "take_rows",
    "stack",
]
