import math

import numpy as np
import pytest
from contact import ArcSegment, BoundarySide, LineSegment, WallChain
from geometry_templates import (NozzleGeometry, NozzlePath, ObstacleSubstrate, PlanarSubstrate, SineSubstrate,
                                SubstrateConstraint, circle_correction, deposition_patch, downward_nozzle_walls,
                                extrusion_patch, extrusion_walls, make_substrate, mirror_segment, rectangle_patch,
                                warp_regulation)
from solver import side_dofs


def test_rectangle_corners():
    patch = rectangle_patch(2.0, 1.0, 3, 4, 2, origin=(1.0, -1.0))
    assert np.allclose(patch.control_points[0][[0, -1]], [[1.0, -1.0], [3.0, -1.0]])
    assert np.allclose(patch.control_points[-1][[0, -1]], [[1.0, 0.0], [3.0, 0.0]])


def test_warp_keeps_row_ends():
    patch = warp_regulation(rectangle_patch(1.0, 1.0, 4, 3, 2), 0.1)
    for h in patch.regulation_points:
        assert h[0] == 0.0 and h[-1] == pytest.approx(1.0)


def test_circle_correction_enlarges_polygon():
    assert 1.0 < circle_correction(12, 2) < 1.1


@pytest.mark.parametrize(
    "segment, point",
    [
        (LineSegment((1.0, 0.0), (2.0, 1.0)), (1.5, 0.6)),
        (ArcSegment((1.0, 0.0), 0.5, 0.0, 0.5 * math.pi), (1.3, 0.3)),
    ]
)
def test_mirrored_segment_keeps_fluid_side(segment, point):
    original, _ = WallChain((segment,)).penetration(np.array([point]))
    mirrored, _ = WallChain((mirror_segment(segment),)).penetration(np.array([[-point[0], point[1]]]))
    assert mirrored[0] == pytest.approx(original[0])


def test_mirror_rejects_unknown_segments():
    with pytest.raises(TypeError):
        mirror_segment("wall")


class TestNozzle:
    def setup_method(self):
        self.nozzle = NozzleGeometry()

    def test_dimensions(self):
        assert self.nozzle.reservoir_radius == pytest.approx(0.8)
        assert self.nozzle.exit_position == pytest.approx(2.0)
        assert np.allclose(self.nozzle.half_width([0.0, 0.7, 1.5]), [0.8, 0.5, 0.2])

    def test_invalid_dimensions(self):
        with pytest.raises(ValueError):
            NozzleGeometry(exit_radius=0.0)
        with pytest.raises(ValueError):
            NozzleGeometry(contraction_ratio=0.5)

    def test_extrusion_patch_fills_the_half_nozzle(self):
        patch = extrusion_patch(self.nozzle, 12, 5, 2)
        assert np.allclose(patch.control_points[0][:, 1], 0.0)
        wall = patch.control_points[-1]
        assert np.allclose(wall[:, 1], self.nozzle.half_width(wall[:, 0]))
        assert wall[-1, 0] == pytest.approx(2.0)

    @pytest.mark.parametrize(
        "point, depth",
        [
            ((1.5, 0.1), -0.1),
            ((1.5, 0.25), 0.05),
        ]
    )
    def test_land_wall(self, point, depth):
        penetration, normal = extrusion_walls(self.nozzle).penetration(np.array([point]))
        assert penetration[0] == pytest.approx(depth)
        assert np.allclose(normal[0], [0.0, 1.0])

    @pytest.mark.parametrize(
        "point, chain, depth",
        [
            ((0.25, 0.5), 1, 0.05),
            ((0.1, 0.5), 1, -0.1),
            ((-0.25, 0.5), 0, 0.05),
        ]
    )
    def test_downward_walls(self, point, chain, depth):
        walls = downward_nozzle_walls(self.nozzle)
        penetration, _ = walls[chain].penetration(np.array([point]))
        assert penetration[0] == pytest.approx(depth)

    def test_deposition_column_reaches_substrate(self):
        patch = deposition_patch(self.nozzle, 0.2, 6, 3, 2)
        assert np.allclose(patch.control_points[0][0], [-0.8, 2.0])
        assert np.allclose(patch.control_points[0][-1], [-0.2, -0.2])
        assert np.allclose(patch.control_points[-1][-1], [0.2, -0.2])


class TestSubstrates:
    @pytest.mark.parametrize(
        "profile, x, expected",
        [
            (PlanarSubstrate(-0.2), 1.0, -0.2),
            (PlanarSubstrate(-0.2, step_position=0.5, step_height=0.1), 1.0, -0.1),
            (SineSubstrate(-0.2, amplitude=0.04, wavelength=1.2), 0.3, -0.16),
            (ObstacleSubstrate(-0.2, obstacle_center=1.2, obstacle_height=0.08, obstacle_width=0.3), 1.2, -0.12),
            (ObstacleSubstrate(-0.2, obstacle_center=1.2, obstacle_height=0.08, obstacle_width=0.3), 2.0, -0.2),
        ]
    )
    def test_heights(self, profile, x, expected):
        assert profile.height(np.array([x]))[0] == pytest.approx(expected)

    def test_make_substrate(self):
        assert isinstance(make_substrate("sine", level=0.0, amplitude=0.1), SineSubstrate)
        with pytest.raises(ValueError):
            make_substrate("wavy")


class TestNozzlePath:
    def setup_method(self):
        self.path = NozzlePath([(0.0, 0.0, 0.0), (2.0, 4.8, 0.0)])

    def test_linear_motion(self):
        assert np.allclose(self.path.position(1.0), [2.4, 0.0])
        assert np.allclose(self.path.velocity(1.0), [2.4, 0.0])
        assert np.allclose(self.path.velocity(3.0), [0.0, 0.0])

    def test_vibration(self):
        path = NozzlePath(self.path.waypoints, vibration_amplitude=0.02, vibration_frequency=2.0)
        assert path.position(0.125)[1] == pytest.approx(0.02)
        assert path.velocity(0.0)[1] == pytest.approx(0.02 * 4.0 * math.pi)

    def test_waypoint_times_increase(self):
        with pytest.raises(ValueError):
            NozzlePath([(0.0, 0.0, 0.0), (0.0, 1.0, 0.0)])

    def test_substrate_constraint_drags_touching_points(self):
        patch = deposition_patch(NozzleGeometry(), 0.2, 6, 3, 2)
        constraint = SubstrateConstraint(PlanarSubstrate(-0.2), self.path)
        values = constraint.apply(patch, 0.0)
        bottom = side_dofs(patch, BoundarySide.XI1)
        assert set(values) == {2 * int(m) + a for m in bottom for a in (0, 1)}
        assert all(values[2 * int(m)] == pytest.approx(-2.4) for m in bottom)
        assert constraint.surface(np.array([0.0]), 1.0)[0] == pytest.approx(-0.2)
