"""Mixed velocity-pressure space on one floating patch.

Velocity uses the patch itself. Pressure rows sit on every other velocity row (``z`` on row ``2 z``),
so each pressure normal span holds two velocity normal spans. Along the characteristic direction the
pressure basis has degree ``p - 1`` on the breakpoints of its velocity row and floats with that row's
map, so pressure functions are evaluated through ``G_{2z}^{-1}``.
"""
import logging
from dataclasses import dataclass
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np

from floating_basis import FloatingPatch, floating_map, inverse_floating_map
from quadrature import QuadraturePointSet
from spline_core import KnotVector, basis_ders_batch, make_degree_reduced

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PressureBasis:
    """Pressure rows of a patch.

    :ivar kvs: degree-reduced parent knot vector per pressure row.
    :type kvs: tuple[KnotVector, ...]
    :ivar velocity_rows: velocity row carrying each pressure row.
    :type velocity_rows: numpy.ndarray
    :ivar breakpoints: normal coordinates of the pressure rows.
    :type breakpoints: numpy.ndarray
    """
    kvs: tuple[KnotVector, ...]
    velocity_rows: np.ndarray
    breakpoints: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.kvs)

    def row_count(self, z: int) -> int:
        kv = self.kvs[z]
        return kv.n_spans if kv.periodic else kv.n_functions

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([self.row_count(z) for z in range(self.n_rows)])]).astype(int)

    @property
    def n_dofs(self) -> int:
        return int(self.offsets[-1])

    @classmethod
    def from_patch(cls, patch: FloatingPatch) -> Self:
        if patch.n_rows % 2 == 0:
            raise ValueError(f"pressure subdivision needs an odd number of velocity rows, got {patch.n_rows}")
        rows = np.arange(0, patch.n_rows, 2)
        kvs = tuple(make_degree_reduced(patch.parent_kvs[j]) for j in rows)
        return cls(kvs, rows, patch.normal_kv.breakpoints[rows])


@dataclass(frozen=True, eq=False)
class PressurePointData:
    """Pressure functions at the quadrature points.

    :ivar dofs: pressure indices ``(P, 2 p)``.
    :ivar values: pressure function values ``(P, 2 p)``.
    :ivar parent_coords: pullbacks into the two pressure rows ``(P, 2)``, reused as warm starts.
    """
    dofs: np.ndarray
    values: np.ndarray
    parent_coords: np.ndarray

    def field(self, coefficients: np.ndarray) -> np.ndarray:
        return np.einsum('pk,pk->p', self.values, coefficients[self.dofs])


def evaluate_pressure(basis: PressureBasis, patch: FloatingPatch, point_set: QuadraturePointSet,
                      previous: PressurePointData | None = None) -> PressurePointData:
    """Pressure function values at every quadrature point of the current regulation state."""
    n_pts = point_set.n_points
    width = basis.kvs[0].degree + 1
    dofs = np.zeros((n_pts, 2 * width), dtype=int)
    values = np.zeros((n_pts, 2 * width))
    coords = np.zeros((n_pts, 2))
    offsets = basis.offsets
    span = point_set.normal_span // 2
    lo = basis.breakpoints[span]
    hi = basis.breakpoints[span + 1]
    t = (point_set.normal_coord - lo) / (hi - lo)
    normal_values = np.column_stack([1.0 - t, t])
    for l in range(point_set.n_quad_rows):
        sl = point_set.row_slice(l)
        s = int(point_set.supported_row[sl][0])
        z0 = int(span[sl][0])
        xi = None
        for side, z in enumerate((z0, z0 + 1)):
            row = int(basis.velocity_rows[z])
            if row == s:
                xt = point_set.parent_coord[sl]
            else:
                if xi is None:
                    xi = np.atleast_1d(floating_map(s, point_set.parent_coord[sl], patch))
                guess = None if previous is None else previous.parent_coords[sl, side]
                xt = np.atleast_1d(inverse_floating_map(row, xi, patch, guess))
            kv = basis.kvs[z]
            ders, first = basis_ders_batch(xt, kv, 0)
            local = first[:, None] + np.arange(width)
            cols = slice(side * width, (side + 1) * width)
            dofs[sl, cols] = offsets[z] + local % basis.row_count(z)
            values[sl, cols] = ders[:, 0] * normal_values[sl, side, None]
            coords[sl, side] = xt
    return PressurePointData(dofs, values, coords)


@dataclass(frozen=True, eq=False)
class MixedSpace:
    """Unknown layout: interleaved velocity ``(d_0x, d_0y, d_1x, ...)`` followed by the pressures."""
    patch: FloatingPatch
    pressure: PressureBasis | None

    @classmethod
    def from_patch(cls, patch: FloatingPatch, incompressible: bool = True) -> Self:
        space = cls(patch, PressureBasis.from_patch(patch) if incompressible else None)
        logger.debug("%d velocity and %d pressure unknowns", space.n_velocity_dofs, space.n_pressure_dofs)
        return space

    @property
    def n_velocity_dofs(self) -> int:
        return 2 * self.patch.n_dofs

    @property
    def n_pressure_dofs(self) -> int:
        return 0 if self.pressure is None else self.pressure.n_dofs

    @property
    def n_unknowns(self) -> int:
        return self.n_velocity_dofs + self.n_pressure_dofs

    def velocity_index(self, m: int, component: int) -> int:
        return 2 * m + component

    def pressure_index(self, z: int) -> int:
        return self.n_velocity_dofs + z

    def split(self, unknowns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Velocities ``(M, 2)`` and pressures of a full unknown vector."""
        n = self.n_velocity_dofs
        return unknowns[:n].reshape(-1, 2), unknowns[n:]
