"""Point and interval metric oracles plus the combined scenario table."""

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowcast.errors import DataError
from flowcast.metrics import (
    METHOD_ORDER,
    METRIC_ORDER,
    MetricReport,
    mae,
    mpiw,
    picp,
    rmse,
    scenario_table,
    score_intervals,
    score_points,
)


class TestPointMetrics:
    def test_mae_oracle(self):
        assert mae([0.0, 0.0], [3.0, -1.0]) == pytest.approx(2.0)

    def test_rmse_oracle(self):
        assert rmse([0.0, 0.0], [3.0, -1.0]) == pytest.approx(math.sqrt(5.0))

    def test_single_pair(self):
        assert mae([1.0], [2.0]) == 1.0
        assert rmse([1.0], [2.0]) == 1.0

    def test_perfect_prediction_scores_zero(self):
        y = np.array([1.0, 2.0, 3.0])
        assert mae(y, y) == 0.0
        assert rmse(y, y) == 0.0

    def test_matrices_are_flattened(self):
        t = np.zeros((2, 2))
        p = np.array([[3.0, -1.0], [3.0, -1.0]])
        assert mae(t, p) == pytest.approx(2.0)

    def test_shape_mismatch_is_rejected(self):
        with pytest.raises(DataError, match="shape mismatch"):
            mae([1.0, 2.0], [1.0])

    def test_empty_arrays_are_rejected(self):
        with pytest.raises(DataError, match="empty"):
            rmse([], [])

    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)),
                    min_size=1, max_size=64))
    def test_mae_never_exceeds_rmse(self, pairs):
        t = np.array([a for a, _ in pairs])
        p = np.array([b for _, b in pairs])
        assert mae(t, p) <= rmse(t, p) + 1e-12


class TestIntervalMetrics:
    def test_picp_oracle(self):
        truth = [2.0, 5.0, 0.5]
        lower = [1.0, 2.0, 0.0]
        upper = [3.0, 4.0, 1.0]
        assert picp(truth, lower, upper) == pytest.approx(2.0 / 3.0)

    def test_mpiw_oracle(self):
        assert mpiw([1.0, 2.0, 0.0], [3.0, 4.0, 1.0]) == pytest.approx(5.0 / 3.0)

    def test_boundary_points_count_as_covered(self):
        assert picp([1.0, 3.0], [1.0, 0.0], [2.0, 3.0]) == 1.0

    def test_zero_width_intervals(self):
        y = np.array([4.0, 5.0])
        assert picp(y, y, y) == 1.0
        assert mpiw(y, y) == 0.0

    def test_mismatched_bounds_are_rejected(self):
        with pytest.raises(DataError, match="shape mismatch"):
            picp([1.0], [0.0, 0.0], [2.0, 2.0])


class TestReports:
    def test_score_points_fields(self):
        report = score_points([0.0, 0.0], [3.0, -1.0])
        assert report.mae == pytest.approx(2.0)
        assert report.rmse == pytest.approx(math.sqrt(5.0))
        assert report.count == 2
        assert report.picp is None and report.mpiw is None

    def test_score_intervals_fields(self):
        report = score_intervals([2.0, 5.0], [2.1, 4.5],
                                 [1.0, 2.0], [3.0, 4.0])
        assert report.picp == pytest.approx(0.5)
        assert report.mpiw == pytest.approx(2.0)

    def test_to_dict_omits_unset_interval_metrics(self):
        assert score_points([1.0], [1.0]).to_dict() == {
            "mae": 0.0, "rmse": 0.0, "count": 1}
        full = score_intervals([1.0], [1.0], [0.0], [2.0]).to_dict()
        assert set(full) == {"mae", "rmse", "picp", "mpiw", "count"}


def scenario(cv, model_mae, model_rmse, picp_val, mpiw_val, ha_mae, ha_rmse):
    return {
        "cv": cv,
        "methods": {
            "model": {"mae": model_mae, "rmse": model_rmse,
                      "picp": picp_val, "mpiw": mpiw_val},
            "ha": {"mae": ha_mae, "rmse": ha_rmse},
        },
    }


class TestScenarioTable:
    def pair(self):
        # Deliberately out of order by CV.
        return [scenario(0.7, 1.5, 2.5, 0.85, 4.0, 2.5, 3.25),
                scenario(0.3, 1.0, 2.0, 0.90, 3.5, 2.25, 3.0)]

    def test_report_sorts_scenarios_by_cv(self):
        report, _ = scenario_table(self.pair())
        assert report["cv_levels"] == [0.3, 0.7]
        assert [s["cv"] for s in report["scenarios"]] == [0.3, 0.7]

    def test_report_survives_json_round_trip(self):
        report, _ = scenario_table(self.pair())
        assert json.loads(json.dumps(report)) == report

    def test_text_header_and_cells(self):
        _, text = scenario_table(self.pair())
        lines = text.splitlines()
        assert lines[0].split() == ["method", "metric", "cv=0.3", "cv=0.7"]
        assert lines[1].split() == ["model", "mae", "1.000000", "1.500000"]
        # ha has no interval metrics, so picp shows up once (for model).
        assert sum("picp" in line for line in lines) == 1

    def test_text_columns_are_aligned(self):
        _, text = scenario_table(self.pair())
        lines = text.splitlines()
        col = lines[0].index("cv=0.3")
        for line in lines[1:]:
            cell = line[col:col + 8]
            assert cell == "" or float(cell) >= 0.0

    def test_methods_follow_fixed_order(self):
        scenarios = self.pair()
        scenarios[0]["methods"]["custom"] = {"mae": 9.0, "rmse": 9.5}
        _, text = scenario_table(scenarios)
        first_col = [line.split()[0] for line in text.splitlines()[1:]]
        seen = list(dict.fromkeys(first_col))
        assert seen == ["model", "ha", "custom"]
        assert METHOD_ORDER[0] == "model" and METRIC_ORDER[0] == "mae"

    def test_mae_above_rmse_is_caught(self):
        bad = [scenario(0.5, 3.0, 1.0, 0.9, 1.0, 1.0, 2.0)]
        with pytest.raises(AssertionError, match="MAE exceeded RMSE"):
            scenario_table(bad)

    def test_empty_input_is_rejected(self):
        with pytest.raises(DataError, match="no completed scenarios"):
            scenario_table([])

    def test_report_is_frozen(self):
        report = MetricReport(mae=1.0, rmse=2.0)
        with pytest.raises(AttributeError):
            report.mae = 5.0
