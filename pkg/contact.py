"""Penalty contact against rigid walls.

Walls are chains of straight and circular segments. Each segment knows which side the fluid is on;
the penetration ``P`` of a body point is its distance beyond the wall measured against the fluid-side
normal, and the body normal used by the penalties is the reversed wall normal. Contact is integrated
with boundary quadrature along the configured patch sides.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np
import scipy.sparse

from floating_basis import FloatingPatch
from quadrature import PointEvaluation, QuadraturePointSet, evaluate_points
from spline_core import GAUSS_LEGENDRE_RULES

logger = logging.getLogger(__name__)


class BoundarySide(Enum):
    """Sides of the parametric unit square.

    :cvar ETA0: first row (``eta = 0``).
    :cvar ETA1: last row (``eta = 1``).
    :cvar XI0: start of every row (``xi = 0``), open rows only.
    :cvar XI1: end of every row (``xi = 1``), open rows only.
    """
    ETA0 = 'eta0'
    ETA1 = 'eta1'
    XI0 = 'xi0'
    XI1 = 'xi1'


class WallSegment(Protocol):
    """A piece of rigid wall.

    ``project`` returns, per point, the closest wall point, the fluid-side unit normal there and a
    mask of points whose projection falls inside the segment.
    """

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ...


@dataclass(frozen=True)
class LineSegment:
    """Straight wall from ``start`` to ``end``; the fluid lies to the left of the direction of travel."""
    start: tuple[float, float]
    end: tuple[float, float]

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = np.asarray(self.start, dtype=float)
        b = np.asarray(self.end, dtype=float)
        direction = b - a
        length2 = float(direction @ direction)
        t = (points - a) @ direction / length2
        closest = a + np.clip(t, 0.0, 1.0)[:, None] * direction
        normal = np.array([-direction[1], direction[0]]) / np.sqrt(length2)
        return closest, np.broadcast_to(normal, points.shape), (t >= 0.0) & (t <= 1.0)


@dataclass(frozen=True)
class ArcSegment:
    """Circular wall of ``radius`` around ``center`` swept from ``start_angle`` by ``sweep`` (radians).

    :ivar fluid_outside: True when the fluid lies outside the circle (a convex corner fillet).
    """
    center: tuple[float, float]
    radius: float
    start_angle: float
    sweep: float
    fluid_outside: bool = True

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=float)
        offset = points - c
        distance = np.maximum(np.linalg.norm(offset, axis=1), 1e-300)
        radial = offset / distance[:, None]
        angle = np.arctan2(offset[:, 1], offset[:, 0])
        relative = np.mod((angle - self.start_angle) * np.sign(self.sweep), 2.0 * np.pi)
        inside = relative <= abs(self.sweep)
        closest = c + self.radius * radial
        normal = radial if self.fluid_outside else -radial
        return closest, normal, inside


@dataclass(frozen=True)
class WallChain:
    segments: tuple[WallSegment, ...]

    def penetration(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Penetration depth and body normal at each point.

        Among the segments whose projection contains a point the closest one wins; points that
        project onto no segment get ``-inf`` (never in contact).

        :return: ``(P, n)`` with ``P > 0`` for points beyond the wall and ``n`` the reversed fluid-side normal.
        :rtype: tuple[numpy.ndarray, numpy.ndarray]
        """
        points = np.atleast_2d(points)
        best = np.full(points.shape[0], np.inf)
        depth = np.full(points.shape[0], -np.inf)
        body_normal = np.zeros_like(points)
        for segment in self.segments:
            closest, normal, inside = segment.project(points)
            gap = points - closest
            distance = np.linalg.norm(gap, axis=1)
            take = inside & (distance < best)
            best = np.where(take, distance, best)
            depth = np.where(take, -np.einsum('pa,pa->p', gap, normal), depth)
            body_normal[take] = -normal[take]
        return depth, body_normal


@dataclass(frozen=True)
class SlipRamp:
    """Linear ramp ``0 -> 1`` on the slip penalty along coordinate ``axis`` between ``start`` and ``stop``."""
    axis: int
    start: float
    stop: float

    def factor(self, points: np.ndarray) -> np.ndarray:
        return np.clip((points[:, self.axis] - self.start) / (self.stop - self.start), 0.0, 1.0)


@dataclass
class ContactParams:
    """Penalty coefficients and wall geometry.

    :ivar penetration_penalty: kappa_P, force per area and penetration length.
    :ivar rate_penalty: kappa_R, force per area and normal speed.
    :ivar slip_penalty: kappa_S, force per area and speed.
    :ivar walls: rigid wall chains.
    :ivar sides: patch sides integrated for contact.
    :ivar slip_ramp: optional spatial ramp on kappa_S.
    """
    penetration_penalty: float
    rate_penalty: float
    slip_penalty: float
    walls: list[WallChain] = field(default_factory=list)
    sides: list[BoundarySide] = field(default_factory=list)
    slip_ramp: SlipRamp | None = None

    def __post_init__(self):
        for name in ("penetration_penalty", "rate_penalty", "slip_penalty"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")


@dataclass(frozen=True, eq=False)
class BoundaryPointSet:
    """Quadrature along patch boundaries.

    :ivar positions: physical positions ``(P, 2)``.
    :ivar dofs: running indices of the functions nonzero at each point ``(P, K)``.
    :ivar values: their values ``(P, K)``.
    :ivar lengths: arc-length weights ``L``.
    :ivar sides: side of each point.
    """
    positions: np.ndarray
    dofs: np.ndarray
    values: np.ndarray
    lengths: np.ndarray
    sides: np.ndarray

    @property
    def n_points(self) -> int:
        return self.lengths.size


def _eta_boundary(side: BoundarySide, patch: FloatingPatch, point_set: QuadraturePointSet,
                  evaluation: PointEvaluation | None):
    l = 0 if side is BoundarySide.ETA0 else point_set.n_quad_rows - 1
    sl = point_set.row_slice(l)
    if evaluation is None:
        evaluation = evaluate_points(point_set, patch, selection=sl)
        rows = slice(None)
    else:
        rows = sl
    tuples = evaluation.tuples
    width = patch.degree + 1
    tangent = np.einsum('pr,pra->pa', tuples.supported_derivs[rows], tuples.controls[rows, :width])
    lengths = point_set.parent_weight[sl] * np.linalg.norm(tangent, axis=1)
    return (evaluation.positions[rows], tuples.dofs[rows, :width], tuples.values[rows, :width], lengths)


def _xi_boundary(side: BoundarySide, patch: FloatingPatch, points_per_span: int):
    if patch.periodic:
        raise ValueError("periodic patches have no xi boundaries")
    nodes, weights = GAUSS_LEGENDRE_RULES[points_per_span]
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    offsets = patch.offsets
    positions, dofs, values, lengths = [], [], [], []
    for j in range(patch.n_rows - 1):
        local = 0 if side is BoundarySide.XI0 else -1
        a = patch.control_points[j][local]
        b = patch.control_points[j + 1][local]
        dof_a = offsets[j] if local == 0 else offsets[j + 1] - 1
        dof_b = offsets[j + 1] if local == 0 else offsets[j + 2] - 1
        positions.append(a + t[:, None] * (b - a))
        dofs.append(np.tile([dof_a, dof_b], (t.size, 1)))
        values.append(np.column_stack([1.0 - t, t]))
        lengths.append(w * np.linalg.norm(b - a))
    return (np.concatenate(positions), np.concatenate(dofs), np.concatenate(values), np.concatenate(lengths))


def build_boundary_points(patch: FloatingPatch, point_set: QuadraturePointSet, sides,
                          evaluation: PointEvaluation | None = None) -> BoundaryPointSet:
    """Boundary quadrature for the requested sides of the current configuration.

    ``eta`` sides reuse the quadrature rows lying on them with arc-length weights; ``xi`` sides are the
    straight end segments between row end points, integrated with the point set's Legendre rule.
    """
    parts = []
    for side in sides:
        if side in (BoundarySide.ETA0, BoundarySide.ETA1):
            part = _eta_boundary(side, patch, point_set, evaluation)
        else:
            part = _xi_boundary(side, patch, point_set.points_per_span)
        parts.append(part + (np.full(part[3].size, side.value),))
    if not parts:
        return BoundaryPointSet(np.zeros((0, 2)), np.zeros((0, 1), dtype=int), np.zeros((0, 1)),
                                np.zeros(0), np.zeros(0, dtype=str))
    width = max(part[1].shape[1] for part in parts)

    def padded(array, fill):
        pad = width - array.shape[1]
        return np.pad(array, ((0, 0), (0, pad)), constant_values=fill) if pad else array

    return BoundaryPointSet(
        positions=np.concatenate([part[0] for part in parts]),
        dofs=np.concatenate([padded(part[1], 0) for part in parts]).astype(int),
        values=np.concatenate([padded(part[2], 0.0) for part in parts]),
        lengths=np.concatenate([part[3] for part in parts]),
        sides=np.concatenate([part[4] for part in parts]),
    )


@dataclass
class ContactContribution:
    """Contact force on the velocity unknowns and its tangent, both in interleaved ``(x, y)`` layout."""
    force: np.ndarray
    tangent: scipy.sparse.csr_matrix
    active_points: int


def contact_state(boundary: BoundaryPointSet, params: ContactParams) -> tuple[np.ndarray, np.ndarray]:
    """Deepest penetration over all wall chains and the matching body normal per boundary point."""
    depth = np.full(boundary.n_points, -np.inf)
    normal = np.zeros((boundary.n_points, 2))
    for chain in params.walls:
        chain_depth, chain_normal = chain.penetration(boundary.positions)
        take = chain_depth > depth
        depth = np.where(take, chain_depth, depth)
        normal[take] = chain_normal[take]
    return depth, normal


def contact_contributions(boundary: BoundaryPointSet, params: ContactParams, velocity: np.ndarray,
                          n_velocity_dofs: int) -> ContactContribution:
    """Penalty force and tangent for the current velocity iterate.

    ``kappa_P`` and ``kappa_S`` act where the penetration is positive, ``kappa_R`` where the normal
    speed is positive. The tangent only carries the velocity-dependent rate and slip terms.

    :param boundary: boundary quadrature of the current configuration.
    :type boundary: BoundaryPointSet
    :param params: penalties and walls.
    :type params: ContactParams
    :param velocity: control-point velocities ``(M, 2)``.
    :type velocity: numpy.ndarray
    :param n_velocity_dofs: length of the interleaved velocity vector.
    :type n_velocity_dofs: int
    :return: force, tangent and the number of points in contact.
    :rtype: ContactContribution
    """
    depth, normal = contact_state(boundary, params)
    v = np.einsum('pk,pka->pa', boundary.values, velocity[boundary.dofs])
    rate = np.einsum('pa,pa->p', v, normal)
    penetrating = depth > 0.0
    approaching = rate > 0.0
    logger.debug("%d of %d boundary points in contact", int(np.count_nonzero(penetrating)), boundary.n_points)
    kappa_p = np.where(penetrating, params.penetration_penalty, 0.0)
    kappa_r = np.where(approaching, params.rate_penalty, 0.0)
    kappa_s = np.where(penetrating, params.slip_penalty, 0.0)
    if params.slip_ramp is not None:
        kappa_s = kappa_s * params.slip_ramp.factor(boundary.positions)

    traction = -((kappa_p * np.where(penetrating, depth, 0.0) + kappa_r * rate)[:, None] * normal
                 + kappa_s[:, None] * v)
    local_force = np.einsum('pa,pk,p->pka', traction, boundary.values, boundary.lengths)
    force = np.zeros((n_velocity_dofs // 2, 2))
    np.add.at(force, boundary.dofs, local_force)

    stiffness = kappa_r[:, None, None] * np.einsum('pa,pb->pab', normal, normal) + kappa_s[:, None, None] * np.eye(2)
    local = np.einsum('pab,pk,pm,p->pkamb', stiffness, boundary.values, boundary.values, boundary.lengths)
    n_pts, width = boundary.dofs.shape
    row_dof = 2 * boundary.dofs[:, :, None] + np.arange(2)[None, None, :]
    rows = np.broadcast_to(row_dof[:, :, :, None, None], local.shape)
    cols = np.broadcast_to(row_dof[:, None, None, :, :], local.shape)
    tangent = scipy.sparse.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())),
                                      shape=(n_velocity_dofs, n_velocity_dofs)).tocsr()
    return ContactContribution(force.ravel(), tangent, int(np.count_nonzero(penetrating | approaching)))
