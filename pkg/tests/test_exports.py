from __future__ import annotations

import csv

import numpy as np
import pytest

from errors import ConfigError
from exports import difference_section, export_artifacts, render_scatter_svg, trace_positions
from section_io import read_section
from seismic_data import Section, TraceDataset


def test_default_trace_positions():
    assert trace_positions(2721) == [544, 1088, 1632, 2176]
    assert trace_positions(10, [0.0, 0.55]) == [0, 5]
    with pytest.raises(ConfigError):
        trace_positions(10, [1.0])


def test_difference_of_identical_sections_is_zero(small_pair):
    impedance, _ = small_pair
    diff = difference_section(impedance, impedance)
    np.testing.assert_array_equal(diff.values.data, 0.0)


def test_scatter_svg_is_decimated():
    rng = np.random.default_rng(0)
    truth = rng.normal(size=5000)
    svg = render_scatter_svg(truth, truth + 0.1, max_points=100)
    assert svg.startswith("<svg")
    assert svg.rstrip().endswith("</svg>")
    assert 0 < svg.count("<circle") <= 100


def test_export_writes_every_artifact(tmp_path, small_dataset, trained):
    summary = export_artifacts(small_dataset, trained.checkpoint, tmp_path / "out")
    n_traces, n_samples = small_dataset.impedance.extents
    assert summary.trace_indices == (2, 4, 7, 9)

    names = {p.name for p in (tmp_path / "out").iterdir()}
    assert {
        "predicted.seis",
        "difference.seis",
        "difference.csv",
        "scatter.csv",
        "scatter.svg",
        "metrics.csv",
        "traces_2.csv",
        "traces_9.csv",
    } <= names

    with (tmp_path / "out" / "scatter.csv").open(encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["true", "pred"]
    assert len(rows) - 1 == n_traces * n_samples

    predicted = read_section(tmp_path / "out" / "predicted.seis", Section)
    difference = read_section(tmp_path / "out" / "difference.seis", Section)
    assert difference.extents == predicted.extents == (n_traces, n_samples)
    assert np.all(difference.values.data >= 0.0)

    with (tmp_path / "out" / "traces_4.csv").open(encoding="utf-8") as handle:
        trace_rows = list(csv.reader(handle))
    assert trace_rows[0] == ["sample", "true_ai", "pred_ai"]
    assert len(trace_rows) - 1 == n_samples
    assert float(trace_rows[1][1]) == small_dataset.impedance.trace(4)[0]

    metrics = (tmp_path / "out" / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert len(metrics) == 1 + n_traces


def test_export_with_empty_validation_split(tmp_path, small_pair, trained):
    impedance, seismic = small_pair
    dataset = TraceDataset.with_step(seismic, impedance, 1)
    assert dataset.validation_indices == ()

    summary = export_artifacts(dataset, trained.checkpoint, tmp_path / "out")
    assert "metrics" in summary.files

    with summary.files["metrics"].open(encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == impedance.n_traces
    assert {row["split"] for row in rows} == {"training"}
