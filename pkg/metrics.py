from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence, Tuple, Union

import numpy as np
from langsmith import traceable

from checkpoint import Checkpoint
from errors import EmptySplitError, ShapeError, ZeroVarianceError
from seismic_data import ImpedanceSection, TraceDataset
from training import predict_section


logger = logging.getLogger(__name__)

Split = Literal["training", "validation"]
PathLike = Union[str, Path]


def _pair(a: Sequence[float], b: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"metric inputs differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise ShapeError("metrics need at least two samples")
    return x, y


def pcc(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson correlation, clipped into [-1, 1] against rounding."""
    x, y = _pair(a, b)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.sum(dx * dx))
    sy = np.sqrt(np.sum(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVarianceError("pcc is undefined for a constant input")
    return float(np.clip(np.sum(dx * dy) / (sx * sy), -1.0, 1.0))


def r2(true_t: Sequence[float], pred: Sequence[float]) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    y, p = _pair(true_t, pred)
    resid = y - p
    centred = y - y.mean()
    ss_tot = float(np.sum(centred * centred))
    if ss_tot == 0.0:
        raise ZeroVarianceError("r2 is undefined for a constant true trace")
    return 1.0 - float(np.sum(resid * resid)) / ss_tot


@dataclass(frozen=True)
class MetricsReport:
    """Per-trace PCC and r2 for one split; averages are per-trace then mean."""

    split: Split
    trace_indices: Tuple[int, ...]
    pcc: Tuple[float, ...]
    r2: Tuple[float, ...]

    @property
    def mean_pcc(self) -> float:
        return float(np.mean(self.pcc))

    @property
    def mean_r2(self) -> float:
        return float(np.mean(self.r2))

    def rows(self) -> Iterable[Tuple[str, int, float, float]]:
        for index, p, r in zip(self.trace_indices, self.pcc, self.r2):
            yield self.split, index, p, r


def score_traces(
    true_section: ImpedanceSection,
    predicted: ImpedanceSection,
    indices: Sequence[int],
    split: Split,
) -> MetricsReport:
    if not len(indices):
        raise EmptySplitError(f"the {split} split has no traces")
    truth = true_section.values.data
    guess = predicted.values.data
    return MetricsReport(
        split=split,
        trace_indices=tuple(int(i) for i in indices),
        pcc=tuple(pcc(truth[i], guess[i]) for i in indices),
        r2=tuple(r2(truth[i], guess[i]) for i in indices),
    )


@traceable(name="tcn_evaluate")
def evaluate(
    dataset: TraceDataset, checkpoint: Checkpoint, threads: int = 1
) -> Tuple[MetricsReport, MetricsReport]:
    """Training and validation reports for ``checkpoint`` on ``dataset``."""
    predicted = predict_section(dataset.seismic, checkpoint, threads=threads)
    training = score_traces(dataset.impedance, predicted, dataset.training_indices, "training")
    validation = score_traces(
        dataset.impedance, predicted, dataset.validation_indices, "validation"
    )
    logger.info(
        "Training PCC=%.4f r2=%.4f | validation PCC=%.4f r2=%.4f",
        training.mean_pcc,
        training.mean_r2,
        validation.mean_pcc,
        validation.mean_r2,
    )
    return training, validation


def format_table(training: MetricsReport, validation: MetricsReport) -> str:
    """Two-column summary (training vs validation), two decimals."""
    lines = [
        f"{'Metric':<8}{'Training':>10}{'Validation':>12}",
        f"{'PCC':<8}{training.mean_pcc:>10.2f}{validation.mean_pcc:>12.2f}",
        f"{'r2':<8}{training.mean_r2:>10.2f}{validation.mean_r2:>12.2f}",
    ]
    return "\n".join(lines)


def write_metrics_csv(path: PathLike, reports: Iterable[MetricsReport]) -> Path:
    """split,trace_index,pcc,r2 rows."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["split", "trace_index", "pcc", "r2"])
        for report in reports:
            for split, index, p, r in report.rows():
                writer.writerow([split, index, repr(p), repr(r)])
    logger.info("Wrote metrics to %s", target)
    return target


__all__ = [
    "pcc",
    "r2",
    "MetricsReport",
    "score_traces",
    "evaluate",
    "format_table",
    "write_metrics_csv",
]
