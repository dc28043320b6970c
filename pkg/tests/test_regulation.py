import numpy as np
import pytest
from errors import RegulationFailure
from floating_basis import greville_regulation
from geometry_templates import annulus_patch, rectangle_patch, warp_regulation
from quadrature import build_point_set, refresh_neighbor_pullbacks
from regulation import (RegulationSettings, assemble_residual, assemble_tangent, free_dofs, patch_diameter,
                        regulation_tolerance, solve_regulation)


class TestRegulation:
    def setup_method(self):
        self.patch = rectangle_patch(2.0, 1.0, 4, 3, 2)
        self.point_set = build_point_set(self.patch)
        self.warped = warp_regulation(self.patch, [0.05, 0.1, -0.08])

    def test_free_dofs_exclude_row_ends(self):
        free = free_dofs(self.patch)
        assert free.size == self.patch.n_dofs - 2 * self.patch.n_rows
        assert 0 not in free and 5 not in free and 6 not in free

    def test_identity_regulation_is_harmonic(self):
        residual = assemble_residual(self.patch, self.point_set)
        assert np.max(np.abs(residual)) < 1e-12

    def test_warped_regulation_has_residual(self):
        point_set = refresh_neighbor_pullbacks(self.point_set, self.warped)
        assert np.max(np.abs(assemble_residual(self.warped, point_set))) > 1e-4

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_tangent_matches_difference_quotient(self, seed):
        rng = np.random.default_rng(seed)
        patch = warp_regulation(self.patch, rng.uniform(-0.1, 0.1, self.patch.n_rows))
        h = patch.regulation_vector()
        free = free_dofs(patch)
        h[free] += rng.uniform(-0.02, 0.02, free.size)
        patch = patch.with_regulation(patch.split_rows(h))
        point_set = refresh_neighbor_pullbacks(self.point_set, patch)
        tangent = assemble_tangent(patch, point_set).toarray()
        scale = np.max(np.abs(tangent))
        eps = 1e-5
        for column in range(free.size):
            shifted = []
            for sign in (1.0, -1.0):
                trial = h.copy()
                trial[free[column]] += sign * eps
                moved = patch.with_regulation(patch.split_rows(trial))
                shifted.append(assemble_residual(moved, refresh_neighbor_pullbacks(point_set, moved)))
            difference = (shifted[0] - shifted[1]) / (2.0 * eps)
            assert np.max(np.abs(tangent[:, column] - difference)) <= 1e-6 * scale

    def test_tangent_symmetric_at_identity(self):
        tangent = assemble_tangent(self.patch, self.point_set).toarray()
        assert np.max(np.abs(tangent - tangent.T)) <= 1e-12 * np.max(np.abs(tangent))

    def test_tolerance_scales_with_patch_diameter(self):
        assert patch_diameter(self.patch) == pytest.approx(np.sqrt(5.0))
        settings = RegulationSettings(tolerance=1e-9)
        assert regulation_tolerance(self.patch, settings) == pytest.approx(1e-9 * np.sqrt(5.0))
        large = rectangle_patch(20.0, 10.0, 4, 3, 2)
        assert regulation_tolerance(large, settings) == pytest.approx(10.0 * regulation_tolerance(self.patch, settings))

    def test_solve_restores_greville_regulation(self):
        result = solve_regulation(self.warped, self.point_set)
        assert result.report.converged
        assert result.report.iterations >= 1
        assert result.report.residual_history[-1] <= 1e-10 * patch_diameter(self.patch)
        assert result.report.tolerance == pytest.approx(1e-10 * np.sqrt(5.0))
        for h, g in zip(result.patch.regulation_points, greville_regulation(self.patch.parent_kvs)):
            assert np.allclose(h, g, atol=1e-8)
        assert result.report.max_interface_angle < 1.0

    def test_control_points_untouched(self):
        result = solve_regulation(self.warped, self.point_set)
        for before, after in zip(self.warped.control_points, result.patch.control_points):
            assert np.array_equal(before, after)

    def test_converged_state_needs_no_iterations(self):
        result = solve_regulation(self.patch, self.point_set)
        assert result.report.iterations == 0
        assert result.report.to_dict()["converged"] is True

    def test_iteration_limit_raises(self):
        with pytest.raises(RegulationFailure):
            solve_regulation(self.warped, self.point_set, RegulationSettings(max_iterations=0))


class TestPeriodicSeam:
    def setup_method(self):
        self.patch = annulus_patch(0.1, 0.2, 8, 3, 2)
        self.point_set = build_point_set(self.patch)
        self.residual = assemble_residual(self.patch, self.point_set)

    @pytest.mark.parametrize("row", [1, 2])
    @pytest.mark.parametrize("periods", [1.0, -1.0])
    def test_whole_period_shift_leaves_residual_unchanged(self, row, periods):
        rows = [h.copy() for h in self.patch.regulation_points]
        rows[row] = rows[row] + periods
        shifted = self.patch.with_regulation(rows)
        residual = assemble_residual(shifted, refresh_neighbor_pullbacks(self.point_set, shifted))
        assert np.allclose(residual, self.residual, rtol=0.0, atol=1e-10)
