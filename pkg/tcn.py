from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import ConfigError, ShapeError
from layers import (
    ConvParams,
    LayerGrads,
    PaddingMode,
    concat_channels,
    concat_channels_backward,
    conv1d_backward,
    conv1d_forward,
    dropout,
    dropout_backward,
    relu,
    relu_backward,
)
from tensor import Rng, Tensor, add


logger = logging.getLogger(__name__)

# Seismic traces enter the network as a single channel.
INPUT_CHANNELS = 1

# Initial head magnitude g as a fraction of ||v||.
HEAD_INIT_GAIN = 0.1


# ---------------------------------------------------------------------
# Architecture description
# ---------------------------------------------------------------------


class TcnConfig(BaseModel):
    """
    Architecture of the temporal block stack and its linear head.

    ``width`` may be passed instead of ``channels`` to give every block the
    same number of output channels. ``dilations`` defaults to
    ``dilation_base ** i`` for block i.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_blocks: int = Field(6, ge=1)
    kernel: int = Field(5, ge=1)
    dropout_p: float = Field(0.2, ge=0.0, lt=1.0)
    channels: Tuple[int, ...]
    dilation_base: int = Field(2, ge=1)
    dilations: Tuple[int, ...]
    padding_mode: PaddingMode = "symmetric"
    seismic_skip: bool = True

    @model_validator(mode="before")
    @classmethod
    def _fill_schedule(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        n_blocks = int(data.get("n_blocks", 6))
        width = data.pop("width", None)
        if data.get("channels") is None:
            data["channels"] = [int(width) if width is not None else 8] * n_blocks
        if data.get("dilations") is None:
            base = int(data.get("dilation_base", 2))
            data["dilations"] = [base**i for i in range(n_blocks)]
        return data

    @model_validator(mode="after")
    def _check_schedule(self) -> "TcnConfig":
        if len(self.channels) != self.n_blocks or len(self.dilations) != self.n_blocks:
            raise ValueError(
                f"channels ({len(self.channels)}) and dilations ({len(self.dilations)}) "
                f"must both have n_blocks={self.n_blocks} entries"
            )
        if any(c < 1 for c in self.channels):
            raise ValueError("every block needs at least one channel")
        expected = tuple(self.dilation_base**i for i in range(self.n_blocks))
        if self.dilations != expected:
            raise ValueError(
                f"dilations {self.dilations} do not follow base {self.dilation_base}: {expected}"
            )
        return self

    @property
    def head_in_channels(self) -> int:
        return self.channels[-1] + (INPUT_CHANNELS if self.seismic_skip else 0)

    def block_io(self) -> List[Tuple[int, int]]:
        """(C_in, C_out) of every block in order."""
        widths = [INPUT_CHANNELS, *self.channels]
        return list(zip(widths[:-1], widths[1:]))


def receptive_field(config: TcnConfig) -> int:
    """Input samples that can influence one output sample (two convs per block)."""
    return 1 + 2 * (config.kernel - 1) * sum(config.dilations)


def count_parameters(config: TcnConfig) -> int:
    """Closed-form size of Θ: each conv has v, g and bias."""

    def conv(c_in: int, c_out: int, kernel: int) -> int:
        return c_out * c_in * kernel + 2 * c_out

    total = 0
    for c_in, c_out in config.block_io():
        total += conv(c_in, c_out, config.kernel) + conv(c_out, c_out, config.kernel)
        if c_in != c_out:
            total += conv(c_in, c_out, 1)
    return total + conv(config.head_in_channels, 1, 1)


# ---------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class BlockParams:
    conv1: ConvParams
    conv2: ConvParams
    skip: Optional[ConvParams] = None

    def convs(self) -> List[ConvParams]:
        items = [self.conv1, self.conv2]
        if self.skip is not None:
            items.append(self.skip)
        return items


@dataclass(frozen=True)
class ModelParams:
    """Θ: every temporal block plus the 1x1 linear head."""

    blocks: Tuple[BlockParams, ...]
    head: ConvParams

    def convs(self) -> List[ConvParams]:
        items: List[ConvParams] = []
        for block in self.blocks:
            items.extend(block.convs())
        items.append(self.head)
        return items

    def tensors(self) -> List[Tensor]:
        """All parameter tensors in the fixed order (v, g, bias) per conv."""
        return [t for conv in self.convs() for t in conv.tensors()]

    @property
    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors())

    def with_tensors(self, tensors: Sequence[Tensor]) -> "ModelParams":
        """Rebuild with new tensors given in ``tensors()`` order."""
        expected = self.tensors()
        if len(tensors) != len(expected):
            raise ShapeError(f"expected {len(expected)} tensors, got {len(tensors)}")
        for old, new in zip(expected, tensors):
            if old.shape != new.shape:
                raise ShapeError(f"tensor shape {new.shape} does not match {old.shape}")
        it = iter(tensors)

        def rebuild(conv: ConvParams) -> ConvParams:
            return conv.with_tensors(next(it), next(it), next(it))

        blocks = []
        for block in self.blocks:
            conv1 = rebuild(block.conv1)
            conv2 = rebuild(block.conv2)
            skip = rebuild(block.skip) if block.skip is not None else None
            blocks.append(BlockParams(conv1=conv1, conv2=conv2, skip=skip))
        return ModelParams(blocks=tuple(blocks), head=rebuild(self.head))


@dataclass(frozen=True)
class ModelGrads:
    """Gradients aligned with ``ModelParams.convs()``."""

    layers: Tuple[LayerGrads, ...]

    def tensors(self) -> List[Tensor]:
        return [t for layer in self.layers for t in layer.tensors()]


def _init_conv(
    c_in: int, c_out: int, kernel: int, dilation: int, rng: Rng, gain: float = 1.0
) -> ConvParams:
    std = math.sqrt(2.0 / (c_in * kernel))
    v = rng.normal(c_out * c_in * kernel, 0.0, std).reshape(c_out, c_in, kernel)
    g = gain * np.sqrt(np.sum(v * v, axis=(1, 2)))
    return ConvParams(
        v=Tensor.adopt(v),
        g=Tensor.adopt(g),
        bias=Tensor.adopt(np.zeros(c_out)),
        dilation=dilation,
    )


def init_params(config: TcnConfig, rng: Rng) -> ModelParams:
    """
    He-style init: v ~ N(0, 2 / (C_in * K)), g = ||v[c]|| so w == v, bias = 0.

    The head keeps the He-style direction but starts at HEAD_INIT_GAIN times
    that magnitude, so its initial weight is HEAD_INIT_GAIN * v.
    """
    blocks = []
    for (c_in, c_out), dilation in zip(config.block_io(), config.dilations):
        conv1 = _init_conv(c_in, c_out, config.kernel, dilation, rng)
        conv2 = _init_conv(c_out, c_out, config.kernel, dilation, rng)
        skip = _init_conv(c_in, c_out, 1, 1, rng) if c_in != c_out else None
        blocks.append(BlockParams(conv1=conv1, conv2=conv2, skip=skip))
    head = _init_conv(config.head_in_channels, 1, 1, 1, rng, gain=HEAD_INIT_GAIN)
    params = ModelParams(blocks=tuple(blocks), head=head)
    logger.debug("Initialized %d parameters", params.parameter_count)
    return params


def params_from_tensors(config: TcnConfig, tensors: Sequence[Tensor]) -> ModelParams:
    """Assemble ModelParams for ``config`` from tensors in ``tensors()`` order."""
    it = iter(tensors)

    def take(c_in: int, c_out: int, kernel: int, dilation: int) -> ConvParams:
        try:
            v, g, bias = next(it), next(it), next(it)
        except StopIteration:
            raise ShapeError("too few tensors for the configured architecture") from None
        if v.shape != (c_out, c_in, kernel):
            raise ShapeError(f"v shape {v.shape} does not match {(c_out, c_in, kernel)}")
        return ConvParams(v=v, g=g, bias=bias, dilation=dilation)

    blocks = []
    for (c_in, c_out), dilation in zip(config.block_io(), config.dilations):
        conv1 = take(c_in, c_out, config.kernel, dilation)
        conv2 = take(c_out, c_out, config.kernel, dilation)
        skip = take(c_in, c_out, 1, 1) if c_in != c_out else None
        blocks.append(BlockParams(conv1=conv1, conv2=conv2, skip=skip))
    head = take(config.head_in_channels, 1, 1, 1)
    if next(it, None) is not None:
        raise ShapeError("too many tensors for the configured architecture")
    return ModelParams(blocks=tuple(blocks), head=head)


def check_compatible(params: ModelParams, config: TcnConfig) -> None:
    if len(params.blocks) != config.n_blocks:
        raise ConfigError(
            f"params have {len(params.blocks)} blocks, config has {config.n_blocks}"
        )
    for i, (block, (c_in, c_out), dilation) in enumerate(
        zip(params.blocks, config.block_io(), config.dilations)
    ):
        conv1 = block.conv1
        if (conv1.in_channels, conv1.out_channels) != (c_in, c_out):
            raise ConfigError(
                f"block {i} maps {conv1.in_channels}->{conv1.out_channels}, "
                f"config says {c_in}->{c_out}"
            )
        if conv1.kernel != config.kernel or conv1.dilation != dilation:
            raise ConfigError(f"block {i} kernel/dilation differ from config")
        if (block.skip is None) != (c_in == c_out):
            raise ConfigError(f"block {i} skip projection does not match its widths")
    if params.head.in_channels != config.head_in_channels:
        raise ConfigError(
            f"head takes {params.head.in_channels} channels, config needs "
            f"{config.head_in_channels}"
        )


# ---------------------------------------------------------------------
# Temporal block
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class BlockCache:
    input: Tensor
    h1: Tensor
    mask1: Tensor
    d1: Tensor
    h2: Tensor
    mask2: Tensor
    z: Tensor


def temporal_block_forward_cached(
    input: Tensor,
    block: BlockParams,
    dropout_p: float,
    rng: Optional[Rng],
    training: bool,
    padding_mode: str,
) -> Tuple[Tensor, BlockCache]:
    h1 = conv1d_forward(input, block.conv1, padding_mode)
    d1, mask1 = dropout(relu(h1), dropout_p, rng, training)
    h2 = conv1d_forward(d1, block.conv2, padding_mode)
    d2, mask2 = dropout(relu(h2), dropout_p, rng, training)
    skip = conv1d_forward(input, block.skip, padding_mode) if block.skip is not None else input
    z = add(d2, skip)
    cache = BlockCache(input=input, h1=h1, mask1=mask1, d1=d1, h2=h2, mask2=mask2, z=z)
    return relu(z), cache


def temporal_block_forward(
    input: Tensor,
    block: BlockParams,
    dropout_p: float,
    rng: Optional[Rng],
    training: bool,
    padding_mode: str = "symmetric",
) -> Tensor:
    """
    relu(main(x) + skip(x)) with main = (conv -> relu -> dropout) x 2.

    skip is the identity when the block keeps its width, a 1x1 conv otherwise.
    """
    channels = input.shape[-2]
    if channels != block.conv1.in_channels:
        raise ShapeError(
            f"block expects {block.conv1.in_channels} channels, got {channels}"
        )
    out, _ = temporal_block_forward_cached(input, block, dropout_p, rng, training, padding_mode)
    return out


def temporal_block_backward(
    cache: BlockCache,
    block: BlockParams,
    upstream: Tensor,
    padding_mode: str = "symmetric",
) -> Tuple[Tensor, Tuple[LayerGrads, ...]]:
    grad_z = relu_backward(cache.z, upstream)
    grad_h2 = relu_backward(cache.h2, dropout_backward(cache.mask2, grad_z))
    grad_d1, grads2 = conv1d_backward(cache.d1, block.conv2, grad_h2, padding_mode)
    grad_h1 = relu_backward(cache.h1, dropout_backward(cache.mask1, grad_d1))
    grad_main, grads1 = conv1d_backward(cache.input, block.conv1, grad_h1, padding_mode)
    if block.skip is None:
        return add(grad_main, grad_z), (grads1, grads2)
    grad_skip, grads_skip = conv1d_backward(cache.input, block.skip, grad_z, padding_mode)
    return add(grad_main, grad_skip), (grads1, grads2, grads_skip)


# ---------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class ModelCache:
    blocks: Tuple[BlockCache, ...]
    head_input: Tensor
    feature_channels: int


def model_forward_cached(
    seismic: Tensor,
    params: ModelParams,
    config: TcnConfig,
    rng: Optional[Rng],
    training: bool,
) -> Tuple[Tensor, ModelCache]:
    if seismic.shape[-2] != INPUT_CHANNELS:
        raise ShapeError(f"seismic input must have one channel, got {seismic.shape}")
    check_compatible(params, config)
    features = seismic
    caches = []
    for block in params.blocks:
        features, cache = temporal_block_forward_cached(
            features, block, config.dropout_p, rng, training, config.padding_mode
        )
        caches.append(cache)
    head_input = concat_channels(features, seismic if config.seismic_skip else None)
    out = conv1d_forward(head_input, params.head, config.padding_mode)
    return out, ModelCache(
        blocks=tuple(caches),
        head_input=head_input,
        feature_channels=features.shape[-2],
    )


def model_forward(
    seismic_trace: Tensor,
    params: ModelParams,
    config: TcnConfig,
    rng: Optional[Rng] = None,
    training: bool = False,
) -> Tensor:
    """
    Seismic [1, L] (or a batch [N, 1, L]) to predicted AI of the same shape.

    Blocks run in sequence, their features are concatenated with the input
    seismic and a 1x1 linear head maps the result to one channel.
    """
    out, _ = model_forward_cached(seismic_trace, params, config, rng, training)
    return out


def model_backward(
    cache: ModelCache,
    params: ModelParams,
    config: TcnConfig,
    upstream: Tensor,
) -> ModelGrads:
    grad_head_in, head_grads = conv1d_backward(
        cache.head_input, params.head, upstream, config.padding_mode
    )
    grad, _ = concat_channels_backward(grad_head_in, cache.feature_channels)
    per_block: List[Tuple[LayerGrads, ...]] = []
    for block, block_cache in zip(reversed(params.blocks), reversed(cache.blocks)):
        grad, grads = temporal_block_backward(block_cache, block, grad, config.padding_mode)
        per_block.append(grads)
    layers: List[LayerGrads] = []
    for grads in reversed(per_block):
        layers.extend(grads)
    layers.append(head_grads)
    return ModelGrads(layers=tuple(layers))


# ---------------------------------------------------------------------
# Receptive-field measurement
# ---------------------------------------------------------------------


def impulse_response_support(config: TcnConfig, rng: Rng) -> int:
    """
    Count output samples reached by a unit impulse through the assembled model.

    Every weight is drawn strictly positive and every bias is zero, so all
    activations stay >= 0, no ReLU masks a path and contributions never
    cancel: an output is non-zero exactly when it lies in the impulse's reach.
    """
    params = init_params(config, rng)
    tensors = []
    for conv in params.convs():
        v = np.abs(conv.v.data) + 0.1
        tensors.extend(
            [
                Tensor.adopt(v),
                Tensor.adopt(np.sqrt(np.sum(v * v, axis=(1, 2)))),
                Tensor.adopt(np.zeros(conv.out_channels)),
            ]
        )
    positive = params.with_tensors(tensors)
    field = receptive_field(config)
    length = 2 * field + 1
    impulse = np.zeros((INPUT_CHANNELS, length))
    impulse[0, field] = 1.0
    out = model_forward(Tensor.adopt(impulse), positive, config, None, training=False)
    return int(np.count_nonzero(out.data))


__all__ = [
    "INPUT_CHANNELS",
    "TcnConfig",
    "BlockParams",
    "ModelParams",
    "ModelGrads",
    "BlockCache",
    "ModelCache",
    "receptive_field",
    "count_parameters",
    "init_params",
    "params_from_tensors",
    "check_compatible",
    "temporal_block_forward",
    "temporal_block_forward_cached",
    "temporal_block_backward",
    "model_forward",
    "model_forward_cached",
    "model_backward",
    "impulse_response_support",
]
