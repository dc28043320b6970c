import math

import numpy as np
import pytest
from contact import (ArcSegment, BoundaryPointSet, BoundarySide, ContactParams, LineSegment, SlipRamp, WallChain,
                     build_boundary_points, contact_contributions, contact_state)
from geometry_templates import rectangle_patch
from quadrature import build_point_set

FLOOR = WallChain((LineSegment((0.0, 0.0), (1.0, 0.0)),))


def single_point(position, length=2.0) -> BoundaryPointSet:
    return BoundaryPointSet(np.array([position], dtype=float), np.array([[0]]), np.array([[1.0]]),
                            np.array([length]), np.array(["eta1"]))


class TestWalls:
    @pytest.mark.parametrize(
        "point, expected",
        [
            ((0.5, -0.1), 0.1),
            ((0.5, 0.2), -0.2),
            ((0.0, -0.3), 0.3),
        ]
    )
    def test_line_penetration(self, point, expected):
        depth, normal = FLOOR.penetration(np.array([point]))
        assert depth[0] == pytest.approx(expected)
        assert np.allclose(normal[0], [0.0, -1.0])

    def test_points_beyond_segment_ends_never_touch(self):
        depth, _ = FLOOR.penetration(np.array([[2.0, -0.1]]))
        assert depth[0] == -np.inf

    def test_convex_arc(self):
        arc = WallChain((ArcSegment((0.0, 0.0), 1.0, 0.0, 0.5 * math.pi),))
        inside = 0.5 * np.array([[1.0, 1.0]])
        depth, normal = arc.penetration(inside)
        assert depth[0] == pytest.approx(1.0 - math.sqrt(0.5))
        assert np.allclose(normal[0], -inside[0] / np.linalg.norm(inside[0]))
        outside_sweep, _ = arc.penetration(np.array([[0.5, -0.5]]))
        assert outside_sweep[0] == -np.inf

    def test_negative_sweep(self):
        arc = WallChain((ArcSegment((0.0, 0.0), 1.0, 0.0, -0.5 * math.pi, fluid_outside=False),))
        depth, _ = arc.penetration(np.array([[1.0, -1.0]]))
        assert depth[0] == pytest.approx(math.sqrt(2.0) - 1.0)

    def test_closest_segment_wins(self):
        corner = WallChain((LineSegment((0.0, 1.0), (0.0, 0.0)), LineSegment((0.0, 0.0), (1.0, 0.0))))
        depth, normal = corner.penetration(np.array([[0.5, -0.05]]))
        assert depth[0] == pytest.approx(0.05)
        assert np.allclose(normal[0], [0.0, -1.0])

    def test_slip_ramp(self):
        ramp = SlipRamp(1, 0.0, 2.0)
        assert np.allclose(ramp.factor(np.array([[9.0, -1.0], [9.0, 1.0], [9.0, 3.0]])), [0.0, 0.5, 1.0])

    def test_negative_penalty_rejected(self):
        with pytest.raises(ValueError):
            ContactParams(-1.0, 0.0, 0.0)


class TestContributions:
    def setup_method(self):
        self.params = ContactParams(100.0, 10.0, 5.0, [FLOOR], [BoundarySide.ETA1])

    def test_penetration_pushes_back(self):
        contribution = contact_contributions(single_point((0.5, -0.1)), self.params, np.zeros((1, 2)), 2)
        assert np.allclose(contribution.force, [0.0, 20.0])
        assert np.allclose(contribution.tangent.toarray(), 10.0 * np.eye(2))
        assert contribution.active_points == 1

    def test_approaching_point(self):
        velocity = np.array([[1.0, -2.0]])
        contribution = contact_contributions(single_point((0.5, -0.1)), self.params, velocity, 2)
        assert np.allclose(contribution.force, [-10.0, 80.0])
        assert np.allclose(contribution.tangent.toarray(), [[10.0, 0.0], [0.0, 30.0]])

    def test_tangent_is_negative_force_derivative(self):
        boundary = single_point((0.5, -0.1))
        velocity = np.array([[0.3, -1.0]])
        tangent = contact_contributions(boundary, self.params, velocity, 2).tangent.toarray()
        eps = 1e-6
        for column in range(2):
            step = np.zeros((1, 2))
            step.flat[column] = eps
            plus = contact_contributions(boundary, self.params, velocity + step, 2).force
            minus = contact_contributions(boundary, self.params, velocity - step, 2).force
            assert np.allclose(-(plus - minus) / (2.0 * eps), tangent[:, column], atol=1e-6)

    def test_separated_point_is_free(self):
        contribution = contact_contributions(single_point((0.5, 0.3)), self.params, np.array([[0.0, 1.0]]), 2)
        assert np.allclose(contribution.force, 0.0)
        assert contribution.tangent.nnz == 0 or np.allclose(contribution.tangent.toarray(), 0.0)
        assert contribution.active_points == 0

    def test_contact_state_takes_deepest_chain(self):
        ceiling = WallChain((LineSegment((1.0, -0.5), (0.0, -0.5)),))
        params = ContactParams(1.0, 0.0, 0.0, [FLOOR, ceiling])
        depth, normal = contact_state(single_point((0.5, -0.1)), params)
        assert depth[0] == pytest.approx(0.4)
        assert np.allclose(normal[0], [0.0, 1.0])


class TestBoundaryPoints:
    def setup_method(self):
        self.patch = rectangle_patch(2.0, 1.0, 4, 3, 2)
        self.point_set = build_point_set(self.patch)

    def test_eta_sides_measure_width(self):
        boundary = build_boundary_points(self.patch, self.point_set, [BoundarySide.ETA0, BoundarySide.ETA1])
        assert np.sum(boundary.lengths) == pytest.approx(4.0)
        assert np.allclose(boundary.positions[boundary.sides == "eta1", 1], 1.0)
        assert np.allclose(boundary.values.sum(axis=1), 1.0)

    def test_xi_sides_measure_height(self):
        boundary = build_boundary_points(self.patch, self.point_set, [BoundarySide.XI1])
        assert np.sum(boundary.lengths) == pytest.approx(1.0)
        assert np.allclose(boundary.positions[:, 0], 2.0)
        assert set(boundary.dofs.ravel()) == {5, 11, 17}

    def test_no_sides(self):
        assert build_boundary_points(self.patch, self.point_set, []).n_points == 0
