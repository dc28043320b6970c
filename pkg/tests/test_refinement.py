import numpy as np
import pytest
from errors import DensityExceeded
from floating_basis import floating_map, row_curve
from geometry_templates import rectangle_patch, warp_regulation
from quadrature import build_point_set
from refinement import (RefinementEvent, RefinementPolicy, adapt, insert_knot, insertion_matrix, remove_knot,
                        removal_matrix, row_segment_lengths, segment_length)
from spline_core import basis_ders_batch, make_open_uniform, make_periodic_uniform

SAMPLES = np.linspace(0.0, 1.0, 31)


def spline_values(kv, coefficients, x):
    ders, first = basis_ders_batch(x, kv, 0)
    local = coefficients[first[:, None] + np.arange(kv.degree + 1)]
    return np.einsum('pr,pr->p', local, ders[:, 0])


class TestKnotOperations:
    def setup_method(self):
        base = rectangle_patch(2.0, 1.0, 4, 3, 2)
        controls = [c + np.column_stack([np.zeros(len(c)), 0.05 * np.sin(3.0 * c[:, 0])]) for c in base.control_points]
        self.patch = warp_regulation(base.with_control_points(controls), [0.0, 0.1, -0.1])

    def test_insertion_preserves_curve_and_map(self):
        refined = insert_knot(1, 0.3, self.patch)
        assert refined.row_count(1) == self.patch.row_count(1) + 1
        assert np.allclose(row_curve(1, SAMPLES, refined), row_curve(1, SAMPLES, self.patch))
        assert np.allclose(floating_map(1, SAMPLES, refined), floating_map(1, SAMPLES, self.patch))
        assert refined.row_count(0) == self.patch.row_count(0)

    def test_removal_undoes_insertion(self):
        restored = remove_knot(1, 0.3, insert_knot(1, 0.3, self.patch))
        assert restored.parent_kvs[1] == self.patch.parent_kvs[1]
        assert np.allclose(restored.control_points[1], self.patch.control_points[1], rtol=0.0, atol=1e-12)
        assert np.allclose(restored.regulation_points[1], self.patch.regulation_points[1], rtol=0.0, atol=1e-12)

    def test_fields_follow_the_row(self):
        rows = [c.copy() for c in self.patch.control_points]
        patch = self.patch.with_field("velocity", rows)
        refined = insert_knot(2, 0.6, patch)
        assert np.allclose(refined.field_controls["velocity"][2], refined.control_points[2])

    def test_insertion_rows_sum_to_one(self):
        matrix = insertion_matrix(make_open_uniform(3, 3), 0.5)
        assert matrix.shape == (7, 6)
        assert np.allclose(matrix.sum(axis=1), 1.0)

    @pytest.mark.parametrize("x", [0.5, 0.0, 1.0])
    def test_insertion_needs_interior_non_knot(self, x):
        with pytest.raises(ValueError):
            insertion_matrix(make_open_uniform(2, 2), x)

    def test_periodic_rows_rejected(self):
        with pytest.raises(ValueError):
            insertion_matrix(make_periodic_uniform(6, 2), 0.1)
        with pytest.raises(ValueError):
            removal_matrix(make_periodic_uniform(6, 2), 0.5)

    def test_linear_removal_drops_coefficient(self):
        matrix = removal_matrix(make_open_uniform(4, 1), 0.5)
        assert matrix.shape == (4, 5)
        assert np.array_equal(matrix @ np.arange(5.0), [0.0, 1.0, 3.0, 4.0])

    def test_removal_exact_for_removable_knots(self):
        coarse = make_open_uniform(4, 3).without_knot(0.5)
        coefficients = np.array([0.3, -1.0, 2.0, 0.5, 1.5, -0.2])
        fine = insertion_matrix(coarse, 0.5) @ coefficients
        assert np.allclose(removal_matrix(make_open_uniform(4, 3), 0.5) @ fine, coefficients)

    def test_linear_function_survives_removal(self):
        kv = make_open_uniform(4, 3)
        reduced = removal_matrix(kv, 0.25) @ kv.greville()
        assert np.allclose(reduced, kv.without_knot(0.25).greville())

    def test_non_removable_knot_keeps_outer_coefficients(self):
        kv = make_open_uniform(4, 2)
        coefficients = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        reduced = removal_matrix(kv, 0.5) @ coefficients
        assert reduced.size == 5
        assert reduced[0] == 0.0 and reduced[-1] == 0.0
        assert not np.allclose(insertion_matrix(kv.without_knot(0.5), 0.5) @ reduced, coefficients)

    @pytest.mark.parametrize(
        "degree, expected",
        [
            (2, [0.0, 0.0, 0.75, 0.0, 0.0]),
            (3, [0.0, 0.0, 0.6, 0.6, 0.0, 0.0]),
        ]
    )
    def test_non_removable_knot_blends_both_recursions(self, degree, expected):
        kv = make_open_uniform(4, degree)
        coefficients = np.zeros(kv.n_functions)
        coefficients[degree] = 1.0
        assert np.allclose(removal_matrix(kv, 0.5) @ coefficients, expected)

    def test_curve_deviation_close_to_least_squares(self):
        kv = make_open_uniform(4, 2)
        coarse = kv.without_knot(0.5)
        insertion = insertion_matrix(coarse, 0.5)
        kink = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        fitted = np.linalg.lstsq(insertion, kink, rcond=None)[0]
        blended = removal_matrix(kv, 0.5) @ kink
        x = np.linspace(0.0, 1.0, 2001)
        oracle = np.max(np.abs(spline_values(kv, insertion @ fitted - kink, x)))
        deviation = np.max(np.abs(spline_values(kv, insertion @ blended - kink, x)))
        assert oracle == pytest.approx(0.27, abs=1e-3)
        assert deviation == pytest.approx(1.0 / 3.0, abs=1e-3)
        assert deviation <= 1.5 * oracle

    @pytest.mark.parametrize("degree", [2, 3])
    @pytest.mark.parametrize("x", [0.25, 0.5])
    def test_removal_agrees_with_least_squares_when_exact(self, degree, x):
        kv = make_open_uniform(4, degree)
        coarse = kv.without_knot(x)
        insertion = insertion_matrix(coarse, x)
        fine = insertion @ np.random.default_rng(3).normal(size=coarse.n_functions)
        fitted = np.linalg.lstsq(insertion, fine, rcond=None)[0]
        assert np.allclose(removal_matrix(kv, x) @ fine, fitted, rtol=0.0, atol=1e-12)

    @pytest.mark.parametrize("degree", [2, 3])
    def test_least_squares_bounds_the_blended_defect(self, degree):
        kv = make_open_uniform(4, degree)
        coarse = kv.without_knot(0.5)
        insertion = insertion_matrix(coarse, 0.5)
        fine = np.random.default_rng(11).normal(size=kv.n_functions)
        fitted = np.linalg.lstsq(insertion, fine, rcond=None)[0]
        blended = removal_matrix(kv, 0.5) @ fine
        best = np.linalg.norm(insertion @ fitted - fine)
        assert best > 1e-6
        assert np.linalg.norm(insertion @ blended - fine) >= best - 1e-12

    def test_insert_then_remove_round_trip(self):
        kv = make_open_uniform(5, 3)
        coefficients = np.linspace(-1.0, 2.0, kv.n_functions) ** 2
        fine = insertion_matrix(kv, 0.37) @ coefficients
        restored = removal_matrix(kv.with_knot(0.37), 0.37) @ fine
        assert np.allclose(restored, coefficients, rtol=0.0, atol=1e-12)


class TestAdapt:
    def setup_method(self):
        self.patch = rectangle_patch(2.0, 1.0, 4, 3, 2)
        self.point_set = build_point_set(self.patch)

    def test_segment_lengths(self):
        lengths = row_segment_lengths(1, self.patch, self.point_set)
        assert np.allclose(lengths, 0.5)
        assert segment_length(3, 2, self.patch, self.point_set) == pytest.approx(0.5)
        with pytest.raises(IndexError):
            segment_length(4, 0, self.patch, self.point_set)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            RefinementPolicy(1.0, 0.6)
        with pytest.raises(ValueError):
            RefinementPolicy(0.0, 0.0)
        policy = RefinementPolicy.from_mean_span(0.5)
        assert policy.insert_threshold == pytest.approx(0.75)
        assert policy.remove_threshold == pytest.approx(0.25)

    def test_long_spans_are_split(self):
        result = adapt(self.patch, self.point_set, RefinementPolicy(0.4, 0.1), step=7)
        assert result.n_inserted == 4 * self.patch.n_rows
        assert result.n_removed == 0
        assert all(kv.n_spans == 8 for kv in result.patch.parent_kvs)
        assert np.allclose(row_curve(1, SAMPLES, result.patch), row_curve(1, SAMPLES, self.patch))
        assert result.events[0].to_dict() == {"step": 7, "row": 0, "knot": 0.125, "action": "insert"}

    def test_short_spans_are_merged(self):
        result = adapt(self.patch, self.point_set, RefinementPolicy(2.0, 0.6))
        assert result.n_removed == 2 * self.patch.n_rows
        assert all(kv.n_spans == 2 for kv in result.patch.parent_kvs)
        assert np.allclose(row_curve(0, SAMPLES, result.patch), row_curve(0, SAMPLES, self.patch))

    def test_quiet_sweep(self):
        result = adapt(self.patch, self.point_set, RefinementPolicy(0.75, 0.25))
        assert result.events == []
        assert result.patch is self.patch

    def test_density_exceeded(self):
        refined = adapt(self.patch, self.point_set, RefinementPolicy(0.4, 0.1)).patch
        with pytest.raises(DensityExceeded):
            adapt(refined, self.point_set, RefinementPolicy(0.2, 0.05))

    def test_event_record(self):
        event = RefinementEvent(row=2, knot=0.5, action="remove")
        assert event.to_dict() == {"step": None, "row": 2, "knot": 0.5, "action": "remove"}
