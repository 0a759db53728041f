from __future__ import annotations

import numpy as np
import pytest

from errors import EmptySplitError, ShapeError, ZeroVarianceError
from metrics import MetricsReport, evaluate, format_table, pcc, r2, write_metrics_csv
from seismic_data import TraceDataset
from tensor import Rng


A = np.array([1.0, 3.0, 2.0, 5.0, 4.0])


def test_pcc_examples():
    assert pcc(A, A) == pytest.approx(1.0, abs=1e-15)
    assert pcc(A, -A) == pytest.approx(-1.0, abs=1e-15)
    assert pcc(A, 2 * A + 3) == pytest.approx(1.0, abs=1e-15)


def test_r2_examples():
    assert r2(A, A) == 1.0
    assert r2(A, np.full_like(A, A.mean())) == pytest.approx(0.0, abs=1e-15)
    assert r2([0.0, 1.0], [1.0, 0.0]) == pytest.approx(-3.0, abs=1e-15)


def test_metric_preconditions():
    with pytest.raises(ZeroVarianceError):
        pcc(A, np.ones(5))
    with pytest.raises(ZeroVarianceError):
        r2(np.ones(5), A)
    with pytest.raises(ShapeError):
        pcc([1.0], [2.0])
    with pytest.raises(ShapeError):
        r2(A, A[:3])


def test_fuzz_invariants():
    rng = Rng(21)
    for _ in range(10_000):
        a = rng.normal(8)
        b = rng.normal(8)
        p = pcc(a, b)
        assert -1.0 <= p <= 1.0
        assert abs(p - pcc(b, a)) <= 1e-12
        assert r2(a, b) <= 1.0
        alpha = rng.normal(1, 0.0, 3.0)[0]
        beta = rng.normal(1, 0.0, 3.0)[0]
        if abs(alpha) > 1e-3:
            assert abs(pcc(a, alpha * b + beta) - np.sign(alpha) * p) <= 1e-9


def test_report_averages_per_trace():
    report = MetricsReport(
        split="validation", trace_indices=(1, 2, 3), pcc=(0.9, 0.8, 0.4), r2=(0.5, -1.0, 0.2)
    )
    assert report.mean_pcc == pytest.approx(0.7)
    assert report.mean_r2 == pytest.approx(-0.1)
    assert list(report.rows())[1] == ("validation", 2, 0.8, -1.0)


def test_evaluate_reports_both_splits(small_dataset, trained):
    training, validation = evaluate(small_dataset, trained.checkpoint)
    assert training.split == "training"
    assert validation.split == "validation"
    assert training.trace_indices == small_dataset.training_indices
    assert validation.trace_indices == small_dataset.validation_indices
    for report in (training, validation):
        assert all(-1.0 <= p <= 1.0 for p in report.pcc)
        assert all(r <= 1.0 for r in report.r2)
        assert report.mean_pcc == pytest.approx(float(np.mean(report.pcc)))


def test_evaluate_is_deterministic(small_dataset, trained):
    assert evaluate(small_dataset, trained.checkpoint) == evaluate(
        small_dataset, trained.checkpoint
    )


def test_empty_validation_split(small_pair, trained):
    impedance, seismic = small_pair
    everything = TraceDataset.with_step(seismic, impedance, 1)
    assert everything.validation_indices == ()
    with pytest.raises(EmptySplitError):
        evaluate(everything, trained.checkpoint)


def test_table_and_csv(tmp_path):
    training = MetricsReport("training", (0, 4), (0.99, 0.97), (0.95, 0.93))
    validation = MetricsReport("validation", (1, 2), (0.96, 0.96), (0.91, 0.91))
    table = format_table(training, validation)
    lines = table.splitlines()
    assert "Training" in lines[0] and "Validation" in lines[0]
    assert lines[1].split() == ["PCC", "0.98", "0.96"]
    assert lines[2].split() == ["r2", "0.94", "0.91"]

    path = write_metrics_csv(tmp_path / "metrics.csv", [training, validation])
    rows = path.read_text(encoding="utf-8").splitlines()
    assert rows[0] == "split,trace_index,pcc,r2"
    assert rows[1] == "training,0,0.99,0.95"
    assert len(rows) == 5
