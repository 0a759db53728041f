from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np

from errors import ConfigError, ShapeError
from tensor import Rng, Tensor


logger = logging.getLogger(__name__)

PaddingMode = Literal["symmetric", "causal"]
PADDING_MODES = ("symmetric", "causal")


# ---------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class ConvParams:
    """
    Weight-normalized 1-D convolution.

    v:    [C_out, C_in, K] direction
    g:    [C_out] magnitude
    bias: [C_out]
    The effective weight of output channel c is g[c] * v[c] / ||v[c]||.
    """

    v: Tensor
    g: Tensor
    bias: Tensor
    dilation: int = 1

    def __post_init__(self) -> None:
        if self.v.rank != 3:
            raise ShapeError(f"v must be [C_out, C_in, K], got {self.v.shape}")
        c_out = self.v.shape[0]
        if self.g.shape != (c_out,) or self.bias.shape != (c_out,):
            raise ShapeError(
                f"g {self.g.shape} and bias {self.bias.shape} must both be ({c_out},)"
            )
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if np.any(_channel_norms(self.v.data) == 0.0):
            raise ShapeError("every output channel of v needs a non-zero norm")

    @property
    def out_channels(self) -> int:
        return self.v.shape[0]

    @property
    def in_channels(self) -> int:
        return self.v.shape[1]

    @property
    def kernel(self) -> int:
        return self.v.shape[2]

    def tensors(self) -> Tuple[Tensor, Tensor, Tensor]:
        return self.v, self.g, self.bias

    def with_tensors(self, v: Tensor, g: Tensor, bias: Tensor) -> "ConvParams":
        return ConvParams(v=v, g=g, bias=bias, dilation=self.dilation)

    def effective_weight(self) -> np.ndarray:
        return weight_norm(self.v.data, self.g.data)


@dataclass(frozen=True)
class LayerGrads:
    """Gradients of one ConvParams, shape-congruent with it."""

    v: Tensor
    g: Tensor
    bias: Tensor

    def tensors(self) -> Tuple[Tensor, Tensor, Tensor]:
        return self.v, self.g, self.bias


# ---------------------------------------------------------------------
# Weight normalization
# ---------------------------------------------------------------------


def _channel_norms(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=(1, 2)))


def weight_norm(v: np.ndarray, g: np.ndarray) -> np.ndarray:
    norms = _channel_norms(v)
    return v * (g / norms)[:, None, None]


def weight_norm_backward(
    v: np.ndarray, g: np.ndarray, grad_w: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Chain rule through w = g * v / ||v||.

    dg = <dw, v> / ||v||
    dv = (g / ||v||) * dw - (g * dg / ||v||^2) * v
    """
    norms = _channel_norms(v)
    grad_g = np.sum(grad_w * v, axis=(1, 2)) / norms
    scale = (g / norms)[:, None, None]
    grad_v = scale * grad_w - (g * grad_g / norms**2)[:, None, None] * v
    return grad_v, grad_g


# ---------------------------------------------------------------------
# Dilated convolution
# ---------------------------------------------------------------------


def padding_amounts(kernel: int, dilation: int, padding_mode: str) -> Tuple[int, int]:
    """(left, right) zero padding that keeps the output length equal to the input."""
    total = dilation * (kernel - 1)
    if padding_mode == "causal":
        return total, 0
    if padding_mode == "symmetric":
        left = total // 2
        return left, total - left
    raise ConfigError(f"padding_mode must be one of {PADDING_MODES}, got {padding_mode!r}")


def _as_batch(t: Tensor) -> Tuple[np.ndarray, bool]:
    if t.rank == 2:
        return t.data[None, :, :], True
    if t.rank == 3:
        return t.data, False
    raise ShapeError(f"expected [C, L] or [N, C, L], got {t.shape}")


def _from_batch(arr: np.ndarray, squeeze: bool) -> Tensor:
    return Tensor.adopt(arr[0] if squeeze else arr)


def _columns(x: np.ndarray, kernel: int, dilation: int, left: int, right: int) -> np.ndarray:
    """[N, C, L] -> [N, C*K, L] with column (c, k) holding the k-th dilated tap."""
    n, c, length = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (left, right)))
    taps = [padded[:, :, k * dilation : k * dilation + length] for k in range(kernel)]
    return np.stack(taps, axis=2).reshape(n, c * kernel, length)


def conv1d_forward(
    input: Tensor, params: ConvParams, padding_mode: str = "symmetric"
) -> Tensor:
    """
    Same-length dilated convolution of [C_in, L] (or a batch [N, C_in, L]).
    """
    x, squeeze = _as_batch(input)
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, conv expects {params.in_channels}"
        )
    left, right = padding_amounts(params.kernel, params.dilation, padding_mode)
    cols = _columns(x, params.kernel, params.dilation, left, right)
    w = params.effective_weight().reshape(params.out_channels, -1)
    out = np.matmul(w, cols) + params.bias.data[None, :, None]
    return _from_batch(out, squeeze)


def conv1d_backward(
    input: Tensor,
    params: ConvParams,
    upstream_grad: Tensor,
    padding_mode: str = "symmetric",
) -> Tuple[Tensor, LayerGrads]:
    x, squeeze = _as_batch(input)
    dy, _ = _as_batch(upstream_grad)
    n, c_in, length = x.shape
    if dy.shape != (n, params.out_channels, length):
        raise ShapeError(
            f"upstream grad {upstream_grad.shape} does not match conv output "
            f"{(n, params.out_channels, length)}"
        )
    kernel, dilation = params.kernel, params.dilation
    left, right = padding_amounts(kernel, dilation, padding_mode)
    cols = _columns(x, kernel, dilation, left, right)

    grad_w = np.tensordot(dy, cols, axes=([0, 2], [0, 2])).reshape(params.v.shape)
    grad_bias = dy.sum(axis=(0, 2))

    w = params.effective_weight().reshape(params.out_channels, -1)
    grad_cols = np.matmul(w.T, dy).reshape(n, c_in, kernel, length)
    grad_padded = np.zeros((n, c_in, length + left + right), dtype=np.float64)
    for k in range(kernel):
        grad_padded[:, :, k * dilation : k * dilation + length] += grad_cols[:, :, k, :]
    grad_x = grad_padded[:, :, left : left + length]

    grad_v, grad_g = weight_norm_backward(params.v.data, params.g.data, grad_w)
    grads = LayerGrads(
        v=Tensor.adopt(grad_v),
        g=Tensor.adopt(grad_g),
        bias=Tensor.adopt(grad_bias),
    )
    return _from_batch(np.ascontiguousarray(grad_x), squeeze), grads


# ---------------------------------------------------------------------
# Pointwise layers
# ---------------------------------------------------------------------


def relu(input: Tensor) -> Tensor:
    return Tensor.adopt(np.maximum(input.data, 0.0))


def relu_backward(input: Tensor, upstream: Tensor) -> Tensor:
    # subgradient at 0 is 0
    if input.shape != upstream.shape:
        raise ShapeError(f"relu grad {upstream.shape} vs input {input.shape}")
    return Tensor.adopt(np.where(input.data > 0.0, upstream.data, 0.0))


def dropout(
    input: Tensor, p: float, rng: Optional[Rng], training: bool
) -> Tuple[Tensor, Tensor]:
    """
    Inverted dropout.

    Returns (output, mask) where mask already carries the 1/(1-p) scale, so
    the backward pass is ``upstream * mask``. In inference mode, or with p=0,
    the mask is all ones and no random numbers are consumed.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return input, Tensor.adopt(np.ones(input.shape))
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    keep = rng.uniform(input.size).reshape(input.shape) >= p
    mask = keep / (1.0 - p)
    return Tensor.adopt(input.data * mask), Tensor.adopt(mask)


def dropout_backward(mask: Tensor, upstream: Tensor) -> Tensor:
    if mask.shape != upstream.shape:
        raise ShapeError(f"dropout grad {upstream.shape} vs mask {mask.shape}")
    return Tensor.adopt(upstream.data * mask.data)


def concat_channels(a: Tensor, b: Optional[Tensor]) -> Tensor:
    """
    Stack ``b``'s channels after ``a``'s ([C_a, L] + [C_b, L] -> [C_a + C_b, L]).

    ``b=None`` stands for a zero-channel tensor and returns ``a``.
    """
    if b is None:
        return a
    if a.rank != b.rank or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"cannot concatenate channels of {a.shape} and {b.shape}")
    return Tensor.adopt(np.concatenate([a.data, b.data], axis=-2))


def concat_channels_backward(
    upstream: Tensor, channels_a: int
) -> Tuple[Tensor, Optional[Tensor]]:
    total = upstream.shape[-2]
    if not 0 < channels_a <= total:
        raise ShapeError(f"cannot split {total} channels at {channels_a}")
    grad_a = Tensor.adopt(upstream.data[..., :channels_a, :].copy())
    if channels_a == total:
        return grad_a, None
    return grad_a, Tensor.adopt(upstream.data[..., channels_a:, :].copy())


def mse_loss(pred: Tensor, target: Tensor) -> Tuple[float, Tensor]:
    """Mean of (pred - target)^2 over all elements, and its gradient."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} and target {target.shape} differ")
    diff = pred.data - target.data
    loss = float(np.mean(diff * diff))
    return loss, Tensor.adopt(2.0 * diff / diff.size)


__all__ = [
    "PaddingMode",
    "PADDING_MODES",
    "ConvParams",
    "LayerGrads",
    "weight_norm",
    "weight_norm_backward",
    "padding_amounts",
    "conv1d_forward",
    "conv1d_backward",
    "relu",
    "relu_backward",
    "dropout",
    "dropout_backward",
    "concat_channels",
    "concat_channels_backward",
    "mse_loss",
]
