import math

import numpy as np
import pytest
from error_metrics import (L2_FLOOR, ErrorRecord, ErrorReport, field_errors, l2_log_error, remove_offset,
                           velocity_at_points)
from errors import ZeroReference
from geometry_templates import rectangle_patch, warp_regulation
from quadrature import build_point_set, evaluate_points


@pytest.mark.parametrize(
    "scale, expected",
    [
        (1.1, -1.0),
        (1.01, -2.0),
        (2.0, 0.0),
    ]
)
def test_relative_log_error(scale, expected):
    analytic = np.array([1.0, -2.0, 3.0])
    weights = np.array([0.2, 0.5, 0.3])
    assert l2_log_error(scale * analytic, analytic, weights) == pytest.approx(expected)


def test_exact_field_hits_floor():
    assert l2_log_error([1.0, 2.0], [1.0, 2.0], [1.0, 1.0]) == L2_FLOOR


def test_zero_reference_rejected():
    with pytest.raises(ZeroReference):
        l2_log_error([1.0], [0.0], [1.0])


def test_remove_offset():
    weights = np.array([1.0, 1.0, 2.0])
    analytic = np.array([1.0, 2.0, 3.0])
    assert np.allclose(remove_offset(analytic + 4.5, analytic, weights), analytic)


class TestFieldErrors:
    def setup_method(self):
        self.patch = warp_regulation(rectangle_patch(2.0, 1.0, 4, 3, 2), [0.0, 0.1, -0.1])
        self.evaluation = evaluate_points(build_point_set(self.patch), self.patch)
        self.controls = np.concatenate(self.patch.control_points)

    def test_isoparametric_velocity_is_exact(self):
        assert np.allclose(velocity_at_points(self.evaluation, self.controls), self.evaluation.positions)
        l2_vx, l2_vy, l2_p = field_errors(self.evaluation, self.controls, lambda x: x)
        assert l2_vx < -12.0
        assert l2_vy < -12.0
        assert math.isnan(l2_p)

    def test_perturbed_velocity(self):
        l2_vx, _, _ = field_errors(self.evaluation, 1.1 * self.controls, lambda x: x)
        assert l2_vx == pytest.approx(-1.0)


def test_report_bookkeeping():
    report = ErrorReport(events=[{"action": "insert"}, {"action": "insert"}, {"action": "remove"}])
    assert report.last is None
    report.append(ErrorRecord(3, 0.3, -4.0, -4.5, float('nan'), 120))
    assert report.last.step == 3
    assert report.rows()[0]["dofs"] == 120
    assert report.n_events("insert") == 2
    assert report.n_events("remove") == 1
