import json
import math

import numpy as np

from app.reports import Report, render_summary, write_csv, write_report
from app.reports.writers import format_float, read_csv_floats
from affine_ifs.schemas import LyapunovSpectrum


def test_format_float_is_lossless():
    for value in (1 / 3, math.pi, 1e-300, -2.5e17):
        assert float(format_float(value)) == value
    assert format_float(float("-inf")) == "-inf"


def test_csv_round_trip_keeps_minus_inf(tmp_path):
    path = write_csv(tmp_path / "table.csv", ["a", "b"], [[1 / 3, float("-inf")], [np.float64(0.1), 2]])
    header, rows = read_csv_floats(path)
    assert header == ["a", "b"]
    assert rows[0][0] == 1 / 3
    assert rows[0][1] == -math.inf
    assert rows[1] == [0.1, 2.0]


def test_report_serializes_minus_inf_exponents(tmp_path):
    spec = LyapunovSpectrum(exponents=(-0.5, float("-inf")), multiplicities=(1, 1), stderr=(0.0, 0.0), gap_tol=1e-3)
    report = Report(task="spectrum", config={}, config_digest="config:0", seed=0, results={"spectrum": spec})
    data = json.loads(write_report(report, tmp_path / "report.json").read_text())
    assert data["results"]["spectrum"]["exponents"] == [-0.5, "-Infinity"]


def test_report_json_can_omit_wall_clock():
    report = Report(task="carpet", config={}, config_digest="config:0", seed=1, wall_clock_seconds=1.5)
    assert "wall_clock_seconds" not in json.loads(report.to_json(include_wall_clock=False))


def test_summary_lists_results_with_provenance():
    report = Report(
        task="lyapdim",
        config={},
        config_digest="config:abc",
        seed=3,
        results={"entropy": 0.6931471805599453, "certified": True},
        provenance={"entropy": "measure:123"},
    )
    summary = render_summary(report)
    assert summary.startswith("# lyapdim report")
    assert "| entropy | 0.693147 | `measure:123` |" in summary
    assert "| certified | true |" in summary
