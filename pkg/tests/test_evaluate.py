"""Per-vertex error, regional max-then-mean metric, report files."""

import numpy as np
import pytest

from hava.evaluate import (EvalError, emit_report, format_metric,
                           mean_vertex_error_field, per_vertex_error,
                           regional_metric, regional_series)
from hava.mesh import RegionMask


def frame_pairs(errors_by_frame, n=6):
    """Ground truth at zero; place each frame's errors on the x axis."""
    pairs = []
    for row in errors_by_frame:
        y = np.zeros((n, 3))
        yhat = np.zeros((n, 3))
        yhat[:len(row), 0] = row
        pairs.append((y, yhat))
    return pairs


# ---------------------------------------------------------------- per-vertex


def test_per_vertex_error_zero_on_equal():
    y = np.random.default_rng(0).normal(size=(8, 3))
    assert per_vertex_error(y, y.copy()).tolist() == [0.0] * 8


def test_per_vertex_error_three_four_five():
    y = np.zeros((1, 3))
    yhat = np.array([[3.0, 4.0, 0.0]])
    assert per_vertex_error(y, yhat).tolist() == [5.0]


def test_per_vertex_error_matches_row_norms():
    rng = np.random.default_rng(1)
    y, yhat = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    want = np.sqrt(np.sum((yhat - y) ** 2, axis=1))
    assert np.max(np.abs(per_vertex_error(y, yhat) - want)) < 1e-15


def test_per_vertex_error_shape_checked():
    with pytest.raises(EvalError, match="N, 3"):
        per_vertex_error(np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(EvalError, match="N, 3"):
        per_vertex_error(np.zeros((4, 3)), np.zeros((5, 3)))


# ------------------------------------------------------------------ regional


def test_regional_metric_zero_on_perfect():
    pairs = frame_pairs([[0.0] * 4, [0.0] * 4], n=4)
    assert regional_metric(pairs, np.arange(4)) == 0.0


def test_regional_metric_max_then_mean():
    # frame peaks inside the mask are 2 and 4; the metric averages them
    pairs = frame_pairs([[2.0, 1.0, 9.0], [4.0, 0.5, 9.0]], n=6)
    mask = np.array([0, 1])            # vertex 2 (error 9) stays outside
    assert regional_metric(pairs, mask) == 3.0
    assert regional_series(pairs, mask).tolist() == [2.0, 4.0]


def test_regional_metric_squared_variant():
    pairs = frame_pairs([[2.0], [4.0]], n=3)
    assert regional_metric(pairs, np.array([0]), squared=True) == 10.0


def test_regional_metric_accepts_region_mask():
    pairs = frame_pairs([[1.0, 5.0]], n=4)
    mask = RegionMask(name="lip", indices=np.array([0, 1]))
    assert regional_metric(pairs, mask) == 5.0


def test_regional_metric_grows_with_mask():
    # adding a worse vertex to the mask can only raise a max-then-mean
    rng = np.random.default_rng(2)
    pairs = [(np.zeros((5, 3)), rng.normal(size=(5, 3))) for _ in range(4)]
    small = regional_metric(pairs, np.array([0, 1]))
    large = regional_metric(pairs, np.array([0, 1, 2, 3, 4]))
    assert large >= small


def test_regional_metric_scales_homogeneously():
    rng = np.random.default_rng(3)
    pairs = [(np.zeros((5, 3)), rng.normal(size=(5, 3))) for _ in range(3)]
    doubled = [(y, 2.0 * yh) for y, yh in pairs]
    base = regional_metric(pairs, np.arange(5))
    assert regional_metric(doubled, np.arange(5)) == pytest.approx(
        2.0 * base, rel=1e-12)


def test_regional_metric_empty_mask_rejected():
    pairs = frame_pairs([[1.0]], n=2)
    with pytest.raises(EvalError, match="empty"):
        regional_metric(pairs, np.array([], dtype=np.int64))


def test_regional_metric_mask_range_checked():
    pairs = frame_pairs([[1.0]], n=2)
    with pytest.raises(EvalError, match="out of range"):
        regional_metric(pairs, np.array([5]))


def test_regional_metric_no_frames_rejected():
    with pytest.raises(EvalError, match="no frames"):
        regional_metric([], np.array([0]))


def test_mean_vertex_error_field_averages_frames():
    pairs = frame_pairs([[1.0, 0.0], [3.0, 2.0]], n=2)
    field = mean_vertex_error_field(pairs)
    assert field.tolist() == [2.0, 1.0]


# ------------------------------------------------------------------- report


def test_format_metric_rounds_half_away_from_zero():
    assert format_metric(0.0625) == "0.063"
    assert format_metric(-0.0625) == "-0.063"
    assert format_metric(0.1234) == "0.123"
    assert format_metric(1.0) == "1.000"


def test_emit_report_table(tmp_path):
    path = tmp_path / "report.csv"
    emit_report([
        {"method": "ours", "dataset": "synthetic", "e_vl": 0.12345, "e_ve": 0.5},
        {"method": "baseline", "dataset": "synthetic", "e_vl": 2.0, "e_ve": None},
    ], path)
    lines = path.read_text().splitlines()
    assert lines == [
        "method,dataset,E_vl,E_ve",
        "ours,synthetic,0.123,0.500",
        "baseline,synthetic,2.000,",
    ]


def test_emit_report_series_file(tmp_path):
    path = tmp_path / "report.csv"
    series_path = emit_report([
        {"method": "ours", "dataset": "synthetic", "e_vl": 1.0, "e_ve": None,
         "series": {"lip": np.array([0.25, 0.5])}},
    ], path)
    assert series_path.endswith("report_series.csv")
    lines = open(series_path).read().splitlines()
    assert lines == [
        "method,region,frame,error_mm",
        "ours,lip,0,0.250000",
        "ours,lip,1,0.500000",
    ]


def test_emit_report_round_trips_metric(tmp_path):
    path = tmp_path / "report.csv"
    value = 0.0714285714
    emit_report([{"method": "m", "dataset": "d", "e_vl": value, "e_ve": None}],
                path)
    cell = path.read_text().splitlines()[1].split(",")[2]
    assert abs(float(cell) - value) <= 5e-4
