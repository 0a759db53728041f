from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Literal, Optional, Sequence, Tuple, Union

import anyio
import anyio.to_thread
import numpy as np
from langsmith import traceable
from pydantic import BaseModel, ConfigDict, Field, model_validator

from checkpoint import CHECKPOINT_VERSION, Checkpoint
from errors import CheckpointVersionError, NonFiniteError, TrainingDivergedError
from layers import mse_loss
from optim import AdamState, adam_step
from seismic_data import (
    ImpedanceSection,
    SeismicSection,
    TraceDataset,
    denormalize,
    normalize,
)
from tcn import (
    ModelParams,
    TcnConfig,
    init_params,
    model_backward,
    model_forward,
    model_forward_cached,
)
from tensor import Rng, Tensor


logger = logging.getLogger(__name__)

# Rng streams derived from the run seed.
INIT_STREAM = 0
DROPOUT_STREAM = 1

# Traces per inference chunk; serial and threaded prediction share it.
PREDICT_CHUNK = 64

PathLike = Union[str, Path]


class TrainConfig(BaseModel):
    """
    Training hyperparameters; defaults follow the published protocol.

    ``dropout_p`` is authoritative and is copied into the embedded TcnConfig.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(0.001, gt=0.0)
    weight_decay: float = Field(0.0001, ge=0.0)
    epochs: int = Field(2941, ge=1)
    dropout_p: float = Field(0.2, ge=0.0, lt=1.0)
    seed: int = Field(0, ge=0)
    batch_policy: Literal["full"] = "full"
    log_every: int = Field(100, ge=1)
    tcn: TcnConfig = Field(default_factory=TcnConfig)

    @model_validator(mode="before")
    @classmethod
    def _sync_dropout(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        tcn = data.get("tcn")
        if isinstance(tcn, TcnConfig):
            tcn = tcn.model_dump()
        tcn = dict(tcn or {})
        if "dropout_p" in data:
            tcn["dropout_p"] = data["dropout_p"]
        elif "dropout_p" in tcn:
            data["dropout_p"] = tcn["dropout_p"]
        data["tcn"] = tcn
        return data


@dataclass(frozen=True)
class TrainResult:
    checkpoint: Checkpoint
    history: Tuple[float, ...]
    optimizer_steps: int = 0


def _diverged_trace(
    x: Tensor, params: ModelParams, config: TcnConfig, indices: Sequence[int]
) -> Optional[int]:
    """First training trace whose inference output is not finite, if any."""
    for row, index in enumerate(indices):
        try:
            model_forward(Tensor.adopt(x.data[row].copy()), params, config)
        except NonFiniteError:
            return index
    return None


def run_epoch(
    params: ModelParams,
    state: AdamState,
    x: Tensor,
    y: Tensor,
    config: TcnConfig,
    rng: Rng,
) -> Tuple[float, ModelParams, AdamState]:
    """
    One full-batch step: forward all traces, mean MSE, backward, Adam update.
    """
    pred, cache = model_forward_cached(x, params, config, rng, training=True)
    loss, grad = mse_loss(pred, y)
    grads = model_backward(cache, params, config, grad)
    tensors, state = adam_step(params.tensors(), grads.tensors(), state)
    return loss, params.with_tensors(tensors), state


@traceable(name="tcn_train")
def train(dataset: TraceDataset, config: TrainConfig) -> TrainResult:
    """
    Minimize the mean MSE over the dataset's training traces.

    The history records each epoch's loss measured before that epoch's update.
    """
    tcn = config.tcn
    params = init_params(tcn, Rng(config.seed, INIT_STREAM))
    state = AdamState.create(params.tensors(), lr=config.lr, weight_decay=config.weight_decay)
    dropout_rng = Rng(config.seed, DROPOUT_STREAM)
    x, y = dataset.training_arrays()
    indices = dataset.training_indices

    logger.info(
        "Training on %d traces x %d samples for %d epochs (%d parameters)",
        len(indices),
        x.shape[-1],
        config.epochs,
        params.parameter_count,
    )
    history: List[float] = []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        try:
            loss, params, state = run_epoch(params, state, x, y, tcn, dropout_rng)
        except NonFiniteError as exc:
            trace = _diverged_trace(x, params, tcn, indices)
            logger.error("Training diverged at epoch %d: %s", epoch, exc)
            raise TrainingDivergedError(epoch, trace, str(exc)) from exc
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, _diverged_trace(x, params, tcn, indices))
        history.append(loss)
        if epoch == 0 or (epoch + 1) % config.log_every == 0 or epoch + 1 == config.epochs:
            logger.info("Epoch %d/%d loss=%.6e", epoch + 1, config.epochs, loss)
    logger.info("Training finished in %.1f s", time.perf_counter() - started)

    checkpoint = Checkpoint(
        config=tcn,
        params=params,
        stats=dataset.stats,
        history=tuple(history),
        seed=config.seed,
    )
    return TrainResult(checkpoint=checkpoint, history=tuple(history), optimizer_steps=state.t)


# ---------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------


def _predict_chunk(x: np.ndarray, checkpoint: Checkpoint) -> np.ndarray:
    out = model_forward(Tensor.adopt(x[:, None, :].copy()), checkpoint.params, checkpoint.config)
    return out.data[:, 0, :]


async def _a_predict_chunks(
    x: np.ndarray, chunks: List[slice], checkpoint: Checkpoint, threads: int
) -> List[np.ndarray]:
    limiter = anyio.CapacityLimiter(threads)
    results: List[Optional[np.ndarray]] = [None] * len(chunks)

    async def run_one(i: int, part: slice) -> None:
        results[i] = await anyio.to_thread.run_sync(
            _predict_chunk, x[part], checkpoint, limiter=limiter
        )

    async with anyio.create_task_group() as tg:
        for i, part in enumerate(chunks):
            tg.start_soon(run_one, i, part)
    return [r for r in results if r is not None]


@traceable(name="tcn_predict_section")
def predict_section(
    seismic_section: SeismicSection, checkpoint: Checkpoint, threads: int = 1
) -> ImpedanceSection:
    """
    Inference over every trace, denormalized to AI units.

    Traces are processed in fixed chunks, so threaded and serial runs
    compute identical arithmetic and agree bit for bit.
    """
    if checkpoint.version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"cannot predict with checkpoint v{checkpoint.version}")
    started = time.perf_counter()
    x = normalize(seismic_section, checkpoint.stats).values.data
    chunks = [
        slice(start, min(start + PREDICT_CHUNK, x.shape[0]))
        for start in range(0, x.shape[0], PREDICT_CHUNK)
    ]
    if threads <= 1 or len(chunks) == 1:
        parts = [_predict_chunk(x[part], checkpoint) for part in chunks]
    else:
        parts = anyio.run(_a_predict_chunks, x, chunks, checkpoint, threads)
    normalized = ImpedanceSection(
        values=Tensor.adopt(np.concatenate(parts, axis=0)),
        trace_spacing_m=seismic_section.trace_spacing_m,
        sample_interval=seismic_section.sample_interval,
        normalized=True,
        predicted=True,
    )
    predicted = denormalize(normalized, checkpoint.stats)
    logger.info(
        "Predicted %d traces in %.3f s (threads=%d)",
        predicted.n_traces,
        time.perf_counter() - started,
        threads,
    )
    return predicted


def write_history_csv(path: PathLike, history: Sequence[float]) -> Path:
    """epoch,loss rows; losses written with full precision."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(history, start=1):
            writer.writerow([epoch, repr(float(loss))])
    logger.info("Wrote training history (%d epochs) to %s", len(history), target)
    return target


__all__ = [
    "TrainConfig",
    "TrainResult",
    "run_epoch",
    "train",
    "predict_section",
    "write_history_csv",
    "PREDICT_CHUNK",
]
