from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from errors import ShapeError
from tensor import Tensor


logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass(frozen=True)
class AdamState:
    """
    Moment estimates and hyperparameters of one Adam run.

    Weight decay is L2-coupled: grad <- grad + weight_decay * theta before
    the moment updates.
    """

    m: Tuple[np.ndarray, ...]
    v: Tuple[np.ndarray, ...]
    t: int = 0
    lr: float = 1e-3
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON
    weight_decay: float = 0.0

    @classmethod
    def create(
        cls,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        weight_decay: float = 0.0,
        beta1: float = BETA1,
        beta2: float = BETA2,
        eps: float = EPSILON,
    ) -> "AdamState":
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {weight_decay}")
        zeros = tuple(_frozen(np.zeros(p.shape)) for p in params)
        return cls(
            m=zeros,
            v=tuple(_frozen(np.zeros(p.shape)) for p in params),
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            weight_decay=weight_decay,
        )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def adam_step(
    params: Sequence[Tensor], grads: Sequence[Tensor], state: AdamState
) -> Tuple[List[Tensor], AdamState]:
    """
    One bias-corrected Adam update; returns new parameters and state.

    Gradients are finite by construction (Tensor rejects NaN/Inf); an update
    that overflows raises NonFiniteError when the new parameter is built.
    """
    if not len(params) == len(grads) == len(state.m):
        raise ShapeError(
            f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    t = state.t + 1
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    new_params: List[Tensor] = []
    new_m: List[np.ndarray] = []
    new_v: List[np.ndarray] = []
    for i, (theta, grad, m, v) in enumerate(zip(params, grads, state.m, state.v)):
        if theta.shape != grad.shape or theta.shape != m.shape:
            raise ShapeError(f"slot {i}: param {theta.shape} vs grad {grad.shape}")
        g = grad.data
        if state.weight_decay:
            g = g + state.weight_decay * theta.data
        m_next = state.beta1 * m + (1.0 - state.beta1) * g
        v_next = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m_next / correction1
        v_hat = v_next / correction2
        new_params.append(Tensor.adopt(theta.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)))
        new_m.append(_frozen(m_next))
        new_v.append(_frozen(v_next))
    return new_params, replace(state, m=tuple(new_m), v=tuple(new_v), t=t)


__all__ = ["AdamState", "adam_step", "BETA1", "BETA2", "EPSILON"]
