"""Parametric control-net templates for the benchmark geometries.

Every template places the control points of row ``j`` at the Greville abscissae of its parent knot
vector, so linear maps are reproduced exactly and the floating maps start at the identity. Wall chains
are listed with the fluid on the left of the direction of travel.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from contact import ArcSegment, LineSegment, WallChain, WallSegment
from floating_basis import FloatingPatch, greville_regulation
from spline_core import basis_ders_batch, make_open_uniform, make_periodic_uniform

logger = logging.getLogger(__name__)


def grid_patch(mapping: Callable[[np.ndarray, float], np.ndarray], n_spans, n_rows: int, degree: int,
               periodic: bool = False) -> FloatingPatch:
    """Patch whose row ``j`` carries control points ``mapping(greville, eta_j)``.

    :param mapping: ``(xi_array, eta) -> (I, 2)`` positions.
    :param n_spans: parent span count, scalar or one per row.
    :param n_rows: number of rows ``J``.
    :param degree: characteristic degree ``p``.
    :param periodic: build periodic rows.
    :return: patch with identity regulation.
    :rtype: FloatingPatch
    """
    spans = np.broadcast_to(np.asarray(n_spans, dtype=int), (n_rows,))
    make = make_periodic_uniform if periodic else make_open_uniform
    kvs = [make(int(n), degree) for n in spans]
    regulation = greville_regulation(kvs)
    controls = [np.asarray(mapping(h, j / (n_rows - 1)), dtype=float).reshape(-1, 2)
                for j, h in enumerate(regulation)]
    return FloatingPatch(tuple(kvs), make_open_uniform(n_rows - 1, 1), tuple(regulation), tuple(controls))


def rectangle_patch(width: float, height: float, n_spans, n_rows: int, degree: int,
                    origin=(0.0, 0.0)) -> FloatingPatch:
    x0, y0 = origin
    return grid_patch(lambda xi, eta: np.column_stack([x0 + width * xi, np.full_like(xi, y0 + height * eta)]),
                      n_spans, n_rows, degree)


def warp_regulation(patch: FloatingPatch, amplitudes) -> FloatingPatch:
    """Perturb the identity regulation by ``h_ij = g_i + w_j sin(pi g_i)`` (open rows only)."""
    if patch.periodic:
        raise ValueError("regulation warp needs open rows")
    amplitudes = np.broadcast_to(np.asarray(amplitudes, dtype=float), (patch.n_rows,))
    greville = greville_regulation(patch.parent_kvs)
    return patch.with_regulation([g + w * np.sin(np.pi * g) for g, w in zip(greville, amplitudes)])


def circle_correction(n_spans: int, degree: int) -> float:
    """Radius factor for periodic control polygons whose curve should pass through the target circle.

    A uniform periodic spline over ``n`` control points on a circle of radius ``R`` passes through
    ``R sum_r N_r cos(2 pi (r - i) / n)`` at the Greville abscissa of point ``i``.
    """
    kv = make_periodic_uniform(n_spans, degree)
    i = degree
    g = kv.greville()[i]
    ders, first = basis_ders_batch(np.array([g]), kv, 0)
    local = first[0] + np.arange(degree + 1)
    reach = float(np.sum(ders[0, 0] * np.cos(2.0 * np.pi * (local - i) / n_spans)))
    return 1.0 / reach


def annulus_patch(inner_radius: float, outer_radius: float, n_spans: int, n_rows: int, degree: int,
                  center=(0.0, 0.0)) -> FloatingPatch:
    """Periodic ring with rows running from the inner to the outer circle.

    The angle decreases along the characteristic direction (``phi = -2 pi xi``), which keeps the
    physical Jacobian positive with rows stacked outwards.
    """
    if not 0.0 < inner_radius < outer_radius:
        raise ValueError(f"need 0 < inner_radius < outer_radius, got {inner_radius}, {outer_radius}")
    factor = circle_correction(n_spans, degree)
    logger.debug("annulus control radii scaled by %.6f", factor)
    cx, cy = center

    def mapping(xi, eta):
        phi = -2.0 * np.pi * xi
        r = factor * (inner_radius + eta * (outer_radius - inner_radius))
        return np.column_stack([cx + r * np.cos(phi), cy + r * np.sin(phi)])

    return grid_patch(mapping, n_spans, n_rows, degree, periodic=True)


def mirror_segment(segment: WallSegment) -> WallSegment:
    """Reflect a segment across ``x = 0`` and reverse it, keeping the fluid on its left."""
    if isinstance(segment, LineSegment):
        (sx, sy), (ex, ey) = segment.start, segment.end
        return LineSegment((-ex, ey), (-sx, sy))
    if isinstance(segment, ArcSegment):
        cx, cy = segment.center
        return ArcSegment((-cx, cy), segment.radius, np.pi - segment.start_angle, -segment.sweep,
                          segment.fluid_outside)
    raise TypeError(f"cannot mirror {type(segment).__name__}")


@dataclass
class NozzleGeometry:
    """Convergent nozzle with a ``4:1`` style contraction, straight land and rounded exit.

    Lengths are measured along the flow direction from the initial piston position.

    :ivar exit_radius: half-width of the land ``r_out``.
    :ivar contraction_ratio: reservoir half-width over ``r_out``.
    :ivar reservoir_length: straight reservoir length before the contraction.
    :ivar contraction_length: length of the converging segment.
    :ivar land_length: straight length ``l`` up to the exit.
    :ivar exit_fillet: radius ``r_e`` of the exit corner.
    :ivar die_face: extent of the flat outer die face beyond the fillet.
    """
    exit_radius: float = 0.2
    contraction_ratio: float = 4.0
    reservoir_length: float = 0.4
    contraction_length: float = 0.6
    land_length: float = 1.0
    exit_fillet: float = 0.025
    die_face: float = 1.0

    def __post_init__(self):
        for name in ("exit_radius", "reservoir_length", "contraction_length", "land_length", "die_face"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.contraction_ratio < 1.0 or self.exit_fillet < 0.0:
            raise ValueError("contraction_ratio must be at least 1 and exit_fillet non-negative")

    @property
    def reservoir_radius(self) -> float:
        return self.contraction_ratio * self.exit_radius

    @property
    def exit_position(self) -> float:
        return self.reservoir_length + self.contraction_length + self.land_length

    def half_width(self, s: np.ndarray) -> np.ndarray:
        """Wall half-width at flow coordinate ``s`` (fillet ignored)."""
        s = np.asarray(s, dtype=float)
        t = np.clip((s - self.reservoir_length) / self.contraction_length, 0.0, 1.0)
        return self.reservoir_radius + t * (self.exit_radius - self.reservoir_radius)

    def wall_segments(self) -> list[WallSegment]:
        """Upper wall in flow coordinates ``(s, y)``, traversed against the flow, fluid below."""
        r = self.exit_radius
        e = self.exit_fillet
        s_exit = self.exit_position
        s_land = self.reservoir_length + self.contraction_length
        segments: list[WallSegment] = [LineSegment((s_exit, r + e + self.die_face), (s_exit, r + e))]
        if e > 0.0:
            segments.append(ArcSegment((s_exit - e, r + e), e, 0.0, -0.5 * np.pi))
        segments += [
            LineSegment((s_exit - e, r), (s_land, r)),
            LineSegment((s_land, r), (self.reservoir_length, self.reservoir_radius)),
            LineSegment((self.reservoir_length, self.reservoir_radius), (-self.die_face, self.reservoir_radius)),
        ]
        return segments


def extrusion_patch(nozzle: NozzleGeometry, n_spans: int, n_rows: int, degree: int) -> FloatingPatch:
    """Half nozzle filled up to the exit plane; row 0 on the symmetry line, the last row on the wall."""
    def mapping(xi, eta):
        s = nozzle.exit_position * xi
        return np.column_stack([s, eta * nozzle.half_width(s)])

    return grid_patch(mapping, n_spans, n_rows, degree)


def extrusion_walls(nozzle: NozzleGeometry) -> WallChain:
    return WallChain(tuple(nozzle.wall_segments()))


def _to_downward(segment: WallSegment, exit_level: float, exit_position: float) -> WallSegment:
    """Rotate a flow-frame segment ``(s, y)`` by -90 degrees into ``(x, z) = (y, exit_level + s_exit - s)``."""
    def point(p):
        s, y = p
        return (y, exit_level + exit_position - s)

    if isinstance(segment, LineSegment):
        return LineSegment(point(segment.start), point(segment.end))
    return ArcSegment(point(segment.center), segment.radius, segment.start_angle - 0.5 * np.pi,
                      segment.sweep, segment.fluid_outside)


def downward_nozzle_walls(nozzle: NozzleGeometry, exit_level: float = 0.0) -> tuple[WallChain, WallChain]:
    """Left and right walls of a full-width nozzle that opens downwards at height ``exit_level``.

    The right wall runs bottom to top and the left wall top to bottom.

    :return: ``(left, right)`` chains for the first and last rows.
    """
    right = [_to_downward(segment, exit_level, nozzle.exit_position) for segment in nozzle.wall_segments()]
    left = [mirror_segment(segment) for segment in reversed(right)]
    return WallChain(tuple(left)), WallChain(tuple(right))


def deposition_patch(nozzle: NozzleGeometry, standoff: float, n_spans: int, n_rows: int, degree: int,
                     exit_level: float = 0.0) -> FloatingPatch:
    """Fluid column from the piston down to the substrate at ``exit_level - standoff``.

    The characteristic direction points downwards and rows run from left to right.
    """
    length = nozzle.exit_position + standoff

    def mapping(xi, eta):
        s = length * xi
        half = np.where(s <= nozzle.exit_position, nozzle.half_width(s), nozzle.exit_radius)
        return np.column_stack([(2.0 * eta - 1.0) * half, exit_level + nozzle.exit_position - s])

    return grid_patch(mapping, n_spans, n_rows, degree)


class SubstrateProfile(Protocol):
    """Substrate height as a function of the world x-coordinate."""

    def height(self, x: np.ndarray) -> np.ndarray:
        ...


@dataclass
class PlanarSubstrate:
    level: float = 0.0
    step_position: float | None = None
    step_height: float = 0.0

    def _step(self, x: np.ndarray) -> np.ndarray:
        if self.step_position is None:
            return np.zeros_like(x)
        return np.where(x >= self.step_position, self.step_height, 0.0)

    def height(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.level + self._step(x)


@dataclass
class SineSubstrate(PlanarSubstrate):
    amplitude: float = 0.0
    wavelength: float = 1.0

    def height(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.level + self.amplitude * np.sin(2.0 * np.pi * x / self.wavelength) + self._step(x)


@dataclass
class ObstacleSubstrate(PlanarSubstrate):
    """Planar substrate with a parabolic bump of ``obstacle_height`` and half-width ``obstacle_width``."""
    obstacle_center: float = 0.0
    obstacle_height: float = 0.0
    obstacle_width: float = 1.0

    def height(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        bump = self.obstacle_height * np.clip(1.0 - ((x - self.obstacle_center) / self.obstacle_width) ** 2, 0.0, None)
        return self.level + bump + self._step(x)


def make_substrate(kind: str, **parameters) -> SubstrateProfile:
    match kind:
        case "planar":
            return PlanarSubstrate(**parameters)
        case "sine":
            return SineSubstrate(**parameters)
        case "obstacle":
            return ObstacleSubstrate(**parameters)
        case _:
            raise ValueError(f"Unknown substrate kind: {kind}")


@dataclass
class NozzlePath:
    """Nozzle position over time: piecewise-linear waypoints ``(t, x, y)`` plus a vertical vibration."""
    waypoints: list[tuple[float, float, float]] = field(default_factory=lambda: [(0.0, 0.0, 0.0)])
    vibration_amplitude: float = 0.0
    vibration_frequency: float = 0.0

    def __post_init__(self):
        times = [w[0] for w in self.waypoints]
        if not times or np.any(np.diff(times) <= 0.0):
            raise ValueError("waypoint times must be strictly increasing")

    def position(self, time: float) -> np.ndarray:
        table = np.asarray(self.waypoints, dtype=float)
        x = np.interp(time, table[:, 0], table[:, 1])
        y = np.interp(time, table[:, 0], table[:, 2])
        y += self.vibration_amplitude * np.sin(2.0 * np.pi * self.vibration_frequency * time)
        return np.array([x, y])

    def velocity(self, time: float) -> np.ndarray:
        table = np.asarray(self.waypoints, dtype=float)
        k = int(np.clip(np.searchsorted(table[:, 0], time, side='right') - 1, 0, len(table) - 1))
        if k == len(table) - 1:
            velocity = np.zeros(2)
        else:
            velocity = (table[k + 1, 1:] - table[k, 1:]) / (table[k + 1, 0] - table[k, 0])
        omega = 2.0 * np.pi * self.vibration_frequency
        velocity[1] += self.vibration_amplitude * omega * np.cos(omega * time)
        return velocity


@dataclass
class SubstrateConstraint:
    """Control points on or below the moving substrate follow it.

    Positions are in the nozzle frame, in which the substrate moves with the negated nozzle velocity.
    The substrate height at nozzle-frame ``x`` and time ``t`` is ``f(x + N_x(t)) - (N_y(t) - N_y(0))``.
    """
    profile: SubstrateProfile
    path: NozzlePath
    tolerance: float = 1e-9

    def surface(self, x: np.ndarray, time: float) -> np.ndarray:
        shift = self.path.position(time) - self.path.position(0.0)
        return self.profile.height(np.asarray(x) + shift[0]) - shift[1]

    def apply(self, patch: FloatingPatch, time: float) -> dict[int, float]:
        positions = np.concatenate(patch.control_points)
        touching = np.flatnonzero(positions[:, 1] <= self.surface(positions[:, 0], time) + self.tolerance)
        velocity = -self.path.velocity(time)
        result = {}
        for m in touching:
            result[2 * int(m)] = float(velocity[0])
            result[2 * int(m) + 1] = float(velocity[1])
        return result

