from __future__ import annotations

import logging
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from langsmith import traceable

from errors import GradientCheckSetupError, NonDeterministicError, ShapeError
from layers import (
    ConvParams,
    concat_channels,
    concat_channels_backward,
    conv1d_backward,
    conv1d_forward,
    dropout,
    dropout_backward,
    mse_loss,
    relu,
    relu_backward,
)
from tcn import (
    BlockCache,
    BlockParams,
    ModelParams,
    TcnConfig,
    model_backward,
    model_forward_cached,
    temporal_block_backward,
    temporal_block_forward_cached,
)
from tensor import Rng, Tensor


logger = logging.getLogger(__name__)

_MACHINE_EPS = float(np.finfo(np.float64).eps)

LossAndGrads = Tuple[float, Sequence[Tensor]]
CheckedFn = Callable[[Sequence[Tensor]], LossAndGrads]

DEFAULT_EPS = 1e-5
LAYER_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4

# Bound on the rounding error of (plus - minus), in units of eps_machine * |loss|.
ROUNDOFF_FACTOR = 8.0

# ReLU inputs of a checked network stay this far from 0.
KINK_MARGIN = 10.0 * DEFAULT_EPS
MAX_DRAWS = 20


def grad_check(
    fn: CheckedFn,
    params: Sequence[Tensor],
    eps: float = DEFAULT_EPS,
    floor: float = 1e-8,
) -> float:
    """
    Compare analytic gradients with central finite differences.

    ``fn(params)`` must return ``(loss, grads)`` with one gradient per
    parameter tensor. The result is the largest
    (|analytic - fd| - roundoff) / max(|analytic|, |fd|, floor) over every
    element, where roundoff bounds the floating-point error of the central
    difference itself and the numerator is clipped at 0.
    """
    loss, analytic = fn(params)
    repeat, _ = fn(params)
    if loss != repeat:
        raise NonDeterministicError(
            f"function returned {loss!r} then {repeat!r} for the same input"
        )
    if len(analytic) != len(params):
        raise ShapeError(f"{len(analytic)} gradients for {len(params)} parameters")

    worst = 0.0
    current: List[Tensor] = list(params)
    for i, param in enumerate(params):
        if analytic[i].shape != param.shape:
            raise ShapeError(f"gradient {analytic[i].shape} vs parameter {param.shape}")
        base = param.data
        for pos in range(param.size):
            bumped = base.copy()
            bumped.flat[pos] = base.flat[pos] + eps
            current[i] = Tensor.adopt(bumped)
            plus, _ = fn(current)
            bumped = base.copy()
            bumped.flat[pos] = base.flat[pos] - eps
            current[i] = Tensor.adopt(bumped)
            minus, _ = fn(current)
            fd = (plus - minus) / (2.0 * eps)
            roundoff = ROUNDOFF_FACTOR * _MACHINE_EPS * max(abs(plus), abs(minus)) / eps
            exact = float(analytic[i].data.flat[pos])
            err = max(abs(exact - fd) - roundoff, 0.0) / max(abs(exact), abs(fd), floor)
            worst = max(worst, err)
        current[i] = param
    return worst


# ---------------------------------------------------------------------
# Layer suite
# ---------------------------------------------------------------------


def _loss_weights(shape: Sequence[int], rng: Rng) -> Tensor:
    """Random fixed weights turning a layer output into a scalar loss."""
    return Tensor.adopt(rng.normal(int(np.prod(shape))).reshape(tuple(shape)))


def _weighted(out: Tensor, weights: Tensor) -> float:
    return float(np.sum(out.data * weights.data))


def _random_conv(c_in: int, c_out: int, kernel: int, dilation: int, rng: Rng) -> ConvParams:
    return ConvParams(
        v=Tensor.adopt(rng.normal(c_out * c_in * kernel).reshape(c_out, c_in, kernel)),
        g=Tensor.adopt(rng.normal(c_out, 1.0, 0.3)),
        bias=Tensor.adopt(rng.normal(c_out, 0.0, 0.1)),
        dilation=dilation,
    )


def check_conv(padding_mode: str, seed: int = 0) -> float:
    rng = Rng(seed, stream=11)
    conv = _random_conv(2, 2, 3, 2, rng)
    x = Tensor.adopt(rng.normal(2 * 7).reshape(2, 7))
    weights = _loss_weights((2, 7), rng)

    def fn(tensors: Sequence[Tensor]) -> LossAndGrads:
        inp, v, g, bias = tensors
        params = conv.with_tensors(v, g, bias)
        out = conv1d_forward(inp, params, padding_mode)
        grad_in, grads = conv1d_backward(inp, params, weights, padding_mode)
        return _weighted(out, weights), [grad_in, *grads.tensors()]

    return grad_check(fn, [x, *conv.tensors()])


def check_relu(seed: int = 0) -> float:
    rng = Rng(seed, stream=12)
    raw = rng.normal(3 * 9).reshape(3, 9)
    # keep every element well away from the kink
    x = Tensor.adopt(np.where(np.abs(raw) < 0.1, raw + np.sign(raw + 1e-12) * 0.1, raw))
    weights = _loss_weights((3, 9), rng)

    def fn(tensors: Sequence[Tensor]) -> LossAndGrads:
        (inp,) = tensors
        return _weighted(relu(inp), weights), [relu_backward(inp, weights)]

    return grad_check(fn, [x])


def check_dropout(seed: int = 0) -> float:
    rng = Rng(seed, stream=13)
    x = Tensor.adopt(rng.normal(2 * 8).reshape(2, 8))
    weights = _loss_weights((2, 8), rng)

    def fn(tensors: Sequence[Tensor]) -> LossAndGrads:
        (inp,) = tensors
        # same stream every call freezes the mask
        out, mask = dropout(inp, 0.3, Rng(seed, stream=14), training=True)
        return _weighted(out, weights), [dropout_backward(mask, weights)]

    return grad_check(fn, [x])


def check_concat(seed: int = 0) -> float:
    rng = Rng(seed, stream=15)
    a = Tensor.adopt(rng.normal(2 * 6).reshape(2, 6))
    b = Tensor.adopt(rng.normal(6).reshape(1, 6))
    weights = _loss_weights((3, 6), rng)

    def fn(tensors: Sequence[Tensor]) -> LossAndGrads:
        left, right = tensors
        out = concat_channels(left, right)
        grad_a, grad_b = concat_channels_backward(weights, left.shape[0])
        return _weighted(out, weights), [grad_a, grad_b]

    return grad_check(fn, [a, b])


def check_head(seed: int = 0) -> float:
    rng = Rng(seed, stream=16)
    head = _random_conv(4, 1, 1, 1, rng)
    x = Tensor.adopt(rng.normal(4 * 10).reshape(4, 10))
    weights = _loss_weights((1, 10), rng)

    def fn(tensors: Sequence[Tensor]) -> LossAndGrads:
        inp, v, g, bias = tensors
        params = head.with_tensors(v, g, bias)
        out = conv1d_forward(inp, params)
        grad_in, grads = conv1d_backward(inp, params, weights)
        return _weighted(out, weights), [grad_in, *grads.tensors()]

    return grad_check(fn, [x, *head.tensors()])


def check_mse(seed: int = 0) -> float:
    rng = Rng(seed, stream=17)
    pred = Tensor.adopt(rng.normal(12).reshape(1, 12))
    target = Tensor.adopt(rng.normal(12).reshape(1, 12))

    def fn(tensors: Sequence[Tensor]) -> LossAndGrads:
        (p,) = tensors
        loss, grad = mse_loss(p, target)
        return loss, [grad]

    return grad_check(fn, [pred])


def _small_config(padding_mode: str = "symmetric") -> TcnConfig:
    return TcnConfig(n_blocks=2, kernel=3, width=3, dropout_p=0.0, padding_mode=padding_mode)


def _random_block(c_in: int, c_out: int, kernel: int, dilation: int, rng: Rng) -> BlockParams:
    conv1 = _random_conv(c_in, c_out, kernel, dilation, rng)
    conv2 = _random_conv(c_out, c_out, kernel, dilation, rng)
    skip = _random_conv(c_in, c_out, 1, 1, rng) if c_in != c_out else None
    return BlockParams(conv1=conv1, conv2=conv2, skip=skip)


def _random_model(config: TcnConfig, rng: Rng) -> ModelParams:
    """Every gain and bias random and non-zero, unlike init_params."""
    blocks = tuple(
        _random_block(c_in, c_out, config.kernel, dilation, rng)
        for (c_in, c_out), dilation in zip(config.block_io(), config.dilations)
    )
    head = _random_conv(config.head_in_channels, 1, 1, 1, rng)
    return ModelParams(blocks=blocks, head=head)


def clear_of_kinks(caches: Sequence[BlockCache], margin: float = KINK_MARGIN) -> bool:
    """
    True when every ReLU input in ``caches`` is more than ``margin`` from 0.

    A residual sum that is exactly 0 adds two clamped terms; it stays 0 under
    small perturbations and does not count.
    """
    for cache in caches:
        for pre in (cache.h1.data, cache.h2.data):
            if np.min(np.abs(pre)) <= margin:
                return False
        z = cache.z.data
        if np.any((z != 0.0) & (np.abs(z) <= margin)):
            return False
    return True


def check_block(seed: int = 0) -> float:
    rng = Rng(seed, stream=18)
    config = _small_config()
    (c_in, c_out), dilation = config.block_io()[0], config.dilations[0]
    for _ in range(MAX_DRAWS):
        block = _random_block(c_in, c_out, config.kernel, dilation, rng)
        x = Tensor.adopt(rng.normal(12).reshape(1, 12))
        _, cache = temporal_block_forward_cached(x, block, 0.0, None, False, config.padding_mode)
        if clear_of_kinks([cache]):
            break
    else:
        raise GradientCheckSetupError(f"no temporal block clear of ReLU kinks in {MAX_DRAWS} draws")
    weights = _loss_weights((c_out, 12), rng)
    n_conv = len(block.convs())

    def fn(tensors: Sequence[Tensor]) -> LossAndGrads:
        inp = tensors[0]
        convs = [
            conv.with_tensors(*tensors[1 + 3 * i : 4 + 3 * i])
            for i, conv in enumerate(block.convs())
        ]
        rebuilt = BlockParams(conv1=convs[0], conv2=convs[1], skip=convs[2] if n_conv == 3 else None)
        out, cache = temporal_block_forward_cached(inp, rebuilt, 0.0, None, False, config.padding_mode)
        grad_in, grads = temporal_block_backward(cache, rebuilt, weights, config.padding_mode)
        return _weighted(out, weights), [grad_in] + [t for g in grads for t in g.tensors()]

    return grad_check(fn, [x] + [t for conv in block.convs() for t in conv.tensors()])


def check_model(seed: int = 0, padding_mode: str = "symmetric") -> float:
    rng = Rng(seed, stream=19)
    config = _small_config(padding_mode)
    for _ in range(MAX_DRAWS):
        params = _random_model(config, rng)
        x = Tensor.adopt(rng.normal(16).reshape(1, 16))
        _, cache = model_forward_cached(x, params, config, None, training=False)
        if clear_of_kinks(cache.blocks):
            break
    else:
        raise GradientCheckSetupError(f"no model clear of ReLU kinks in {MAX_DRAWS} draws")
    target = Tensor.adopt(rng.normal(16).reshape(1, 16))

    def fn(tensors: Sequence[Tensor]) -> LossAndGrads:
        model = params.with_tensors(tensors)
        pred, cache = model_forward_cached(x, model, config, None, training=False)
        loss, grad = mse_loss(pred, target)
        return loss, model_backward(cache, model, config, grad).tensors()

    return grad_check(fn, params.tensors())


LAYER_CHECKS: Dict[str, Callable[[int], float]] = {
    "conv1d_symmetric": lambda seed: check_conv("symmetric", seed),
    "conv1d_causal": lambda seed: check_conv("causal", seed),
    "relu": check_relu,
    "dropout_frozen": check_dropout,
    "concat_channels": check_concat,
    "linear_head": check_head,
    "mse_loss": check_mse,
    "temporal_block": check_block,
}

MODEL_CHECKS: Dict[str, Callable[[int], float]] = {
    "model_symmetric": lambda seed: check_model(seed, "symmetric"),
    "model_causal": lambda seed: check_model(seed, "causal"),
}


@traceable(name="tcn_gradient_suite")
def run_gradient_suite(seed: int = 0) -> Dict[str, Tuple[float, float]]:
    """
    Run every layer and model check.

    Returns ``{name: (max_relative_error, tolerance)}``.
    """
    results: Dict[str, Tuple[float, float]] = {}
    for name, check in LAYER_CHECKS.items():
        results[name] = (check(seed), LAYER_TOLERANCE)
    for name, check in MODEL_CHECKS.items():
        results[name] = (check(seed), MODEL_TOLERANCE)
    for name, (error, tol) in results.items():
        logger.info("Gradient check %-18s max rel error %.3e (tol %.0e)", name, error, tol)
    return results


__all__ = [
    "grad_check",
    "check_conv",
    "check_relu",
    "check_dropout",
    "check_concat",
    "check_head",
    "check_mse",
    "check_block",
    "check_model",
    "clear_of_kinks",
    "LAYER_CHECKS",
    "MODEL_CHECKS",
    "LAYER_TOLERANCE",
    "MODEL_TOLERANCE",
    "run_gradient_suite",
]
