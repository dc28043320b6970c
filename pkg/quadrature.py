"""Boundary-anchored Lagrangian quadrature for floating patches.

Quadrature rows ``l = 0 .. 2J-3`` sit on the two-point Lobatto nodes of every normal span, so the
normal basis is Kronecker-delta at each point: exactly one row ``s`` is supported, and its neighbor
``n`` only enters through the normal derivative. Along each quadrature row the points are Gauss-Legendre
nodes of a fixed quadrature knot vector in the parent domain of row ``s``. Parent data never change;
only the neighbor pullbacks follow floating updates, and physical positions follow the control points.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import Callable
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np

from errors import SingularMap
from floating_basis import (SINGULAR_DETERMINANT, CoordinateBundle, FloatingPatch, TupleEvaluation,
                            evaluate_tuples, floating_map, inverse_floating_map, jacobian_from_tuples)
from spline_core import KnotVector, legendre_stencil, lobatto2_stencil, make_open_uniform

logger = logging.getLogger(__name__)


def s_of_l(l: int, n_rows: int) -> int:
    """Supported row of quadrature row ``l`` (zero-based form of ``s = 1 + (l - l % 2) / 2``)."""
    if not 0 <= l <= 2 * n_rows - 3:
        raise IndexError(f"quadrature row {l} out of range for {n_rows} rows")
    return (l + 1) // 2


def n_of_l(l: int, n_rows: int) -> int:
    """Neighbor row of quadrature row ``l``; the next row when ``l`` is even (one-based odd)."""
    s = s_of_l(l, n_rows)
    return s + 1 if l % 2 == 0 else s - 1


def density_array(density_factors, n_rows: int) -> np.ndarray:
    rho = np.broadcast_to(np.asarray(density_factors, dtype=int), (n_rows,)).copy()
    for value in rho:
        if value < 1 or value & (value - 1):
            raise ValueError(f"density factors must be powers of two, got {value}")
    return rho


def quadrature_span_count(l: int, initial_spans, rho) -> int:
    """Spans of the quadrature knot vector of row ``l``: ``max(rho_s nS_s, 2 rho_n nS_n)``."""
    n_rows = len(initial_spans)
    s = s_of_l(l, n_rows)
    n = n_of_l(l, n_rows)
    return int(max(rho[s] * initial_spans[s], 2 * rho[n] * initial_spans[n]))


@dataclass(frozen=True, eq=False)
class QuadraturePointSet:
    """Integration state of a floating patch.

    Per-point arrays share one flat index; points of quadrature row ``l`` occupy
    ``row_offsets[l]:row_offsets[l + 1]`` in order of increasing parent coordinate.

    :ivar quad_kvs: quadrature knot vector of every quadrature row.
    :type quad_kvs: tuple[KnotVector, ...]
    :ivar points_per_span: Gauss-Legendre points per quadrature span.
    :type points_per_span: int
    :ivar density_factors: maximum relative shrinkage per row.
    :type density_factors: numpy.ndarray
    :ivar initial_spans: parent span counts the quadrature vectors were sized for.
    :type initial_spans: numpy.ndarray
    :ivar row_offsets: start index of every quadrature row.
    :type row_offsets: numpy.ndarray
    :ivar quad_row: quadrature row of each point.
    :ivar parent_coord: parent coordinate in the supported row.
    :ivar normal_coord: normal coordinate.
    :ivar normal_span: normal span the point belongs to.
    :ivar supported_row: supported row s.
    :ivar neighbor_row: neighbor row n.
    :ivar neighbor_parent_coord: pullback into the neighbor row (changes on floating updates).
    :ivar parent_weight: Legendre weight.
    :ivar normal_weight: Lobatto weight.
    :ivar positions: cached physical positions.
    :ivar physical_weights: cached physical weights.
    """
    quad_kvs: tuple[KnotVector, ...]
    points_per_span: int
    density_factors: np.ndarray
    initial_spans: np.ndarray
    row_offsets: np.ndarray
    quad_row: np.ndarray
    parent_coord: np.ndarray
    normal_coord: np.ndarray
    normal_span: np.ndarray
    supported_row: np.ndarray
    neighbor_row: np.ndarray
    neighbor_parent_coord: np.ndarray
    parent_weight: np.ndarray
    normal_weight: np.ndarray
    positions: np.ndarray
    physical_weights: np.ndarray

    @property
    def n_points(self) -> int:
        return self.parent_coord.size

    @property
    def n_quad_rows(self) -> int:
        return len(self.quad_kvs)

    def point_index(self, g: int, l: int) -> int:
        start, stop = self.row_offsets[l], self.row_offsets[l + 1]
        if not 0 <= g < stop - start:
            raise IndexError(f"point {g} out of range for quadrature row {l}")
        return int(start + g)

    def row_slice(self, l: int) -> slice:
        return slice(int(self.row_offsets[l]), int(self.row_offsets[l + 1]))

    def bundle(self, selection=slice(None)) -> CoordinateBundle:
        return CoordinateBundle(
            parent_coord=np.atleast_1d(self.parent_coord[selection]),
            neighbor_parent_coord=np.atleast_1d(self.neighbor_parent_coord[selection]),
            normal_coord=np.atleast_1d(self.normal_coord[selection]),
            supported_row=np.atleast_1d(self.supported_row[selection]),
            neighbor_row=np.atleast_1d(self.neighbor_row[selection]),
            normal_span=np.atleast_1d(self.normal_span[selection]),
        )

    def with_geometry(self, evaluation: "PointEvaluation") -> Self:
        return replace(self, positions=evaluation.positions, physical_weights=evaluation.weights)


@dataclass(frozen=True, eq=False)
class PointEvaluation:
    """Everything the assemblers need at the quadrature points for one patch state.

    :ivar tuples: bivariate functions coupled at each point.
    :type tuples: TupleEvaluation
    :ivar jacobians: physical Jacobians ``(P, 2, 2)``.
    :ivar determinants: their determinants.
    :ivar inverse_jacobians: their inverses.
    :ivar grads: physical gradients ``(P, T, 2)``.
    :ivar param_weights: parametric weights ``J_s w_parent w_normal``.
    :ivar weights: physical weights ``det(J) w``.
    :ivar positions: physical positions of the points.
    """
    tuples: TupleEvaluation
    jacobians: np.ndarray
    determinants: np.ndarray
    inverse_jacobians: np.ndarray
    grads: np.ndarray
    param_weights: np.ndarray
    weights: np.ndarray
    positions: np.ndarray


def map_point_chunks(func: Callable[[slice], object], n_points: int, threads: int = 1) -> list:
    """Apply ``func`` to contiguous point slices, optionally on a thread pool; results keep slice order."""
    if threads <= 1 or n_points < 2 * threads:
        return [func(slice(0, n_points))]
    bounds = np.linspace(0, n_points, threads + 1).astype(int)
    slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, slices))


def _concat_tuples(parts: list[TupleEvaluation]) -> TupleEvaluation:
    if len(parts) == 1:
        return parts[0]
    return TupleEvaluation(**{f.name: np.concatenate([getattr(t, f.name) for t in parts], axis=0)
                              for f in fields(TupleEvaluation)})


def evaluate_points(point_set: QuadraturePointSet, patch: FloatingPatch, threads: int = 1,
                    selection=slice(None)) -> PointEvaluation:
    """Evaluate bases, gradients, Jacobians, weights and positions at the quadrature points.

    :raises SingularMap: if a physical Jacobian collapses.
    """
    indices = np.arange(point_set.n_points)[selection]

    def work(chunk: slice) -> TupleEvaluation:
        return evaluate_tuples(point_set.bundle(indices[chunk]), patch)

    tuples = _concat_tuples(map_point_chunks(work, indices.size, threads))
    width = patch.degree + 1
    jac = jacobian_from_tuples(tuples)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    if np.any(np.abs(det) < SINGULAR_DETERMINANT):
        worst = int(np.argmin(np.abs(det)))
        raise SingularMap(f"physical Jacobian singular at point {indices[worst]} (det={det[worst]:.3e})")
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1] / det
    inv[:, 1, 1] = jac[:, 0, 0] / det
    inv[:, 0, 1] = -jac[:, 0, 1] / det
    inv[:, 1, 0] = -jac[:, 1, 0] / det
    grads = np.einsum('pba,ptb->pta', inv, tuples.param_grads)
    param_weights = (tuples.supported_jacobian * point_set.parent_weight[indices]
                     * point_set.normal_weight[indices])
    positions = np.einsum('pr,pra->pa', tuples.supported_values, tuples.controls[:, :width])
    return PointEvaluation(tuples, jac, det, inv, grads, param_weights, det * param_weights, positions)


def _pullbacks(point_set_rows, patch: FloatingPatch, previous=None) -> np.ndarray:
    quad_row, parent_coord, supported, neighbor, offsets = point_set_rows
    result = np.empty_like(parent_coord)
    for l in range(offsets.size - 1):
        sl = slice(offsets[l], offsets[l + 1])
        s = int(supported[sl][0])
        n = int(neighbor[sl][0])
        xi = np.atleast_1d(floating_map(s, parent_coord[sl], patch))
        guess = None if previous is None else previous[sl]
        result[sl] = inverse_floating_map(n, xi, patch, guess)
    return result


def build_point_set(patch: FloatingPatch, points_per_span: int | None = None, density_factors=1,
                    initial_spans=None) -> QuadraturePointSet:
    """Construct the quadrature point set of a patch.

    :param patch: patch in its initial state.
    :type patch: FloatingPatch
    :param points_per_span: Gauss-Legendre points per quadrature span, default ``p + 1``.
    :type points_per_span: int | None
    :param density_factors: scalar or per-row powers of two bounding the expected parent refinement.
    :param initial_spans: parent span counts to size against, default the current ones.
    :return: point set with neighbor pullbacks, positions and weights initialized.
    :rtype: QuadraturePointSet
    """
    n_rows = patch.n_rows
    p = patch.degree
    count = p + 1 if points_per_span is None else points_per_span
    rho = density_array(density_factors, n_rows)
    spans = np.array([kv.n_spans for kv in patch.parent_kvs] if initial_spans is None else initial_spans, dtype=int)
    normal = lobatto2_stencil(patch.normal_kv)

    quad_kvs = []
    columns = {name: [] for name in ("quad_row", "parent_coord", "normal_coord", "normal_span",
                                     "supported_row", "neighbor_row", "parent_weight", "normal_weight")}
    offsets = [0]
    for l in range(2 * n_rows - 2):
        s = s_of_l(l, n_rows)
        n = n_of_l(l, n_rows)
        kv = make_open_uniform(quadrature_span_count(l, spans, rho), p)
        if not kv.contains_knots_of(patch.parent_kvs[s]):
            raise ValueError(f"quadrature row {l} does not contain the parent knots of row {s}")
        stencil = legendre_stencil(kv, count)
        size = len(stencil)
        quad_kvs.append(kv)
        columns["quad_row"].append(np.full(size, l))
        columns["parent_coord"].append(stencil.coordinates)
        columns["normal_coord"].append(np.full(size, normal.coordinates[l]))
        columns["normal_span"].append(np.full(size, l // 2))
        columns["supported_row"].append(np.full(size, s))
        columns["neighbor_row"].append(np.full(size, n))
        columns["parent_weight"].append(stencil.weights)
        columns["normal_weight"].append(np.full(size, normal.weights[l]))
        offsets.append(offsets[-1] + size)

    data = {name: np.concatenate(values) for name, values in columns.items()}
    for name in ("quad_row", "normal_span", "supported_row", "neighbor_row"):
        data[name] = data[name].astype(int)
    offsets = np.array(offsets, dtype=int)
    neighbor_coord = _pullbacks((data["quad_row"], data["parent_coord"], data["supported_row"],
                                 data["neighbor_row"], offsets), patch)
    point_set = QuadraturePointSet(
        quad_kvs=tuple(quad_kvs),
        points_per_span=count,
        density_factors=rho,
        initial_spans=spans,
        row_offsets=offsets,
        neighbor_parent_coord=neighbor_coord,
        positions=np.zeros((offsets[-1], 2)),
        physical_weights=np.zeros(offsets[-1]),
        **data,
    )
    logger.debug("built %d quadrature points on %d quadrature rows", point_set.n_points, len(quad_kvs))
    return point_set.with_geometry(evaluate_points(point_set, patch))


def refresh_neighbor_pullbacks(point_set: QuadraturePointSet, patch: FloatingPatch) -> QuadraturePointSet:
    """Recompute ``xt_sn = G_n^{-1}(G_s(xt))`` for every point, warm-started from the previous values."""
    coords = _pullbacks((point_set.quad_row, point_set.parent_coord, point_set.supported_row,
                         point_set.neighbor_row, point_set.row_offsets), patch, point_set.neighbor_parent_coord)
    return replace(point_set, neighbor_parent_coord=coords)


def basis_at_point(g: int, l: int, patch: FloatingPatch, point_set: QuadraturePointSet) -> tuple[np.ndarray, np.ndarray]:
    """Running indices and values of the bivariate functions coupled at point ``(g, l)``."""
    k = point_set.point_index(g, l)
    tuples = evaluate_tuples(point_set.bundle([k]), patch)
    return tuples.dofs[0], tuples.values[0]


def grad_at_point(g: int, l: int, patch: FloatingPatch, point_set: QuadraturePointSet
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Running indices, parametric gradients and physical gradients at point ``(g, l)``."""
    k = point_set.point_index(g, l)
    evaluation = evaluate_points(point_set, patch, selection=[k])
    return evaluation.tuples.dofs[0], evaluation.tuples.param_grads[0], evaluation.grads[0]


def physical_position(g: int, l: int, patch: FloatingPatch, point_set: QuadraturePointSet) -> np.ndarray:
    """Lagrangian position ``sum_i c_is N_is(xt)``; depends on the control points only."""
    k = point_set.point_index(g, l)
    tuples = evaluate_tuples(point_set.bundle([k]), patch)
    width = patch.degree + 1
    return tuples.supported_values[0] @ tuples.controls[0, :width]


def weights(g: int, l: int, patch: FloatingPatch, point_set: QuadraturePointSet) -> tuple[float, float]:
    """Parametric and physical weight of point ``(g, l)``."""
    k = point_set.point_index(g, l)
    evaluation = evaluate_points(point_set, patch, selection=[k])
    return float(evaluation.param_weights[0]), float(evaluation.weights[0])


def integrate(point_set: QuadraturePointSet, patch: FloatingPatch, values,
              evaluation: PointEvaluation | None = None) -> float:
    """Quadrature sum ``sum f(x) W`` of per-point integrand values."""
    point_weights = point_set.physical_weights if evaluation is None else evaluation.weights
    return float(np.dot(np.asarray(values, dtype=float), point_weights))
