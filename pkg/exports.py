from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from langsmith import traceable

from checkpoint import Checkpoint
from errors import ConfigError
from metrics import score_traces, write_metrics_csv
from section_io import write_section, write_section_csv
from seismic_data import ImpedanceSection, Section, TraceDataset, ensure_paired
from tensor import Tensor
from training import predict_section


logger = logging.getLogger(__name__)

DEFAULT_POSITIONS: Tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)

# Scatter SVG canvas and point budget; scatter.csv always keeps every sample.
SVG_SIZE = 480
SVG_MARGIN = 48
SVG_MAX_POINTS = 20000

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ExportSummary:
    out_dir: Path
    files: Dict[str, Path] = field(default_factory=dict)
    trace_indices: Tuple[int, ...] = ()


def trace_positions(n_traces: int, fractions: Sequence[float] = DEFAULT_POSITIONS) -> List[int]:
    """floor(f * n_traces) for each fraction in [0, 1)."""
    picked: List[int] = []
    for f in fractions:
        if not 0.0 <= f < 1.0:
            raise ConfigError(f"trace position {f} must lie in [0, 1)")
        picked.append(int(np.floor(f * n_traces)))
    return picked


def difference_section(true_section: ImpedanceSection, predicted: ImpedanceSection) -> Section:
    ensure_paired(true_section, predicted)
    diff = np.abs(predicted.values.data - true_section.values.data)
    return Section(
        values=Tensor.adopt(diff),
        trace_spacing_m=true_section.trace_spacing_m,
        sample_interval=true_section.sample_interval,
    )


def write_trace_csv(path: PathLike, true_trace: np.ndarray, pred_trace: np.ndarray) -> Path:
    target = Path(path)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sample", "true_ai", "pred_ai"])
        for sample, (t, p) in enumerate(zip(true_trace, pred_trace)):
            writer.writerow([sample, repr(float(t)), repr(float(p))])
    return target


def write_scatter_csv(path: PathLike, true_values: np.ndarray, pred_values: np.ndarray) -> Path:
    target = Path(path)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["true", "pred"])
        for t, p in zip(true_values.ravel(), pred_values.ravel()):
            writer.writerow([repr(float(t)), repr(float(p))])
    return target


def render_scatter_svg(
    true_values: np.ndarray,
    pred_values: np.ndarray,
    max_points: int = SVG_MAX_POINTS,
) -> str:
    """
    Minimal scatter plot: axes, a y = x reference line and one circle per point.

    Points are decimated with a fixed stride when there are more than
    ``max_points``, so the output is deterministic.
    """
    t = true_values.ravel()
    p = pred_values.ravel()
    stride = max(1, int(np.ceil(t.size / max_points)))
    t, p = t[::stride], p[::stride]

    lo = float(min(t.min(), p.min()))
    hi = float(max(t.max(), p.max()))
    span = hi - lo if hi > lo else 1.0
    inner = SVG_SIZE - 2 * SVG_MARGIN

    def sx(v: float) -> float:
        return SVG_MARGIN + (v - lo) / span * inner

    def sy(v: float) -> float:
        return SVG_SIZE - SVG_MARGIN - (v - lo) / span * inner

    bottom = SVG_SIZE - SVG_MARGIN
    right = SVG_SIZE - SVG_MARGIN
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" '
        f'viewBox="0 0 {SVG_SIZE} {SVG_SIZE}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{SVG_MARGIN}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{SVG_MARGIN}" y1="{bottom}" x2="{SVG_MARGIN}" y2="{SVG_MARGIN}" stroke="black"/>',
        f'<line x1="{SVG_MARGIN}" y1="{bottom}" x2="{right}" y2="{SVG_MARGIN}" '
        'stroke="grey" stroke-dasharray="4 4"/>',
        f'<text x="{SVG_SIZE / 2:.0f}" y="{SVG_SIZE - 12}" text-anchor="middle" '
        'font-size="14">True AI</text>',
        f'<text x="14" y="{SVG_SIZE / 2:.0f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 14 {SVG_SIZE / 2:.0f})">Predicted AI</text>',
        f'<text x="{SVG_MARGIN}" y="{bottom + 16}" font-size="11">{lo:.4g}</text>',
        f'<text x="{right}" y="{bottom + 16}" text-anchor="end" font-size="11">{hi:.4g}</text>',
        '<g fill="steelblue" fill-opacity="0.4">',
    ]
    out.extend(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="1.2"/>' for a, b in zip(t, p))
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


@traceable(name="tcn_export_artifacts")
def export_artifacts(
    dataset: TraceDataset,
    checkpoint: Checkpoint,
    out_dir: PathLike,
    positions: Sequence[float] = DEFAULT_POSITIONS,
    threads: int = 1,
) -> ExportSummary:
    """
    Write the figure data for a trained model.

    predicted.seis, difference.seis/.csv, traces_<idx>.csv, scatter.csv,
    scatter.svg and metrics.csv land in ``out_dir``.
    """
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    predicted = predict_section(dataset.seismic, checkpoint, threads=threads)
    truth = dataset.impedance
    diff = difference_section(truth, predicted)

    files: Dict[str, Path] = {
        "predicted": write_section(target / "predicted.seis", predicted),
        "difference": write_section(target / "difference.seis", diff),
        "difference_csv": write_section_csv(target / "difference.csv", diff),
    }

    indices = trace_positions(truth.n_traces, positions)
    for index in indices:
        files[f"traces_{index}"] = write_trace_csv(
            target / f"traces_{index}.csv", truth.trace(index), predicted.trace(index)
        )

    files["scatter"] = write_scatter_csv(
        target / "scatter.csv", truth.values.data, predicted.values.data
    )
    svg_path = target / "scatter.svg"
    svg_path.write_text(
        render_scatter_svg(truth.values.data, predicted.values.data), encoding="utf-8"
    )
    files["scatter_svg"] = svg_path

    splits = (
        ("training", dataset.training_indices),
        ("validation", dataset.validation_indices),
    )
    reports = [
        score_traces(truth, predicted, indices, name) for name, indices in splits if len(indices)
    ]
    for name, indices in splits:
        if not len(indices):
            logger.warning("The %s split has no traces; metrics.csv leaves it out", name)
    files["metrics"] = write_metrics_csv(target / "metrics.csv", reports)

    logger.info("Exported %d artifacts to %s (traces %s)", len(files), target, indices)
    return ExportSummary(out_dir=target, files=files, trace_indices=tuple(indices))


__all__ = [
    "DEFAULT_POSITIONS",
    "ExportSummary",
    "trace_positions",
    "difference_section",
    "render_scatter_svg",
    "export_artifacts",
]
