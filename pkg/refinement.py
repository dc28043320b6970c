"""Adaptive h-refinement of the parent knot vectors along the characteristic direction.

Insertion and removal act on one row at a time and transform that row's regulation points, control
points and field controls with the same coefficient matrix. The quadrature point set is never rebuilt:
parent coordinates of the points stay put, which is only valid while every parent knot is also a
breakpoint of the pre-sized quadrature knot vectors.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from errors import DensityExceeded
from floating_basis import FloatingPatch, is_monotone, row_tangent
from quadrature import QuadraturePointSet, n_of_l, s_of_l
from spline_core import KNOT_TOLERANCE, KnotVector, find_span

logger = logging.getLogger(__name__)


@dataclass
class RefinementPolicy:
    """Thresholds of the adaptive sweep.

    :ivar insert_threshold: physical span length above which a span is split.
    :type insert_threshold: float
    :ivar remove_threshold: physical span length below which a bounding knot is removed.
    :type remove_threshold: float
    :ivar max_density_factors: largest admissible shrinkage per row, powers of two.
    :type max_density_factors: list[int] | int
    """
    insert_threshold: float
    remove_threshold: float
    max_density_factors: list[int] | int = 1

    def __post_init__(self):
        if self.insert_threshold <= 0.0:
            raise ValueError(f"insert_threshold must be positive, got {self.insert_threshold}")
        if not 0.0 <= self.remove_threshold < 0.5 * self.insert_threshold:
            raise ValueError(f"remove_threshold {self.remove_threshold} must lie in [0, insert_threshold / 2)")
        if np.any(np.asarray(self.max_density_factors) < 1):
            raise ValueError("max_density_factors must be at least 1")

    @classmethod
    def from_mean_span(cls, mean_length: float, insert_factor: float = 1.5, remove_factor: float = 0.5,
                       max_density_factors=1) -> "RefinementPolicy":
        return cls(insert_factor * mean_length, remove_factor * mean_length, max_density_factors)


@dataclass
class RefinementEvent:
    row: int
    knot: float
    action: str
    step: int | None = None

    def to_dict(self) -> dict:
        return {"step": self.step, "row": self.row, "knot": self.knot, "action": self.action}


@dataclass
class AdaptResult:
    patch: FloatingPatch
    events: list[RefinementEvent] = field(default_factory=list)

    @property
    def n_inserted(self) -> int:
        return sum(event.action == "insert" for event in self.events)

    @property
    def n_removed(self) -> int:
        return sum(event.action == "remove" for event in self.events)


def _length_row(j: int) -> int:
    return 0 if j == 0 else 2 * j - 1


def row_segment_lengths(j: int, patch: FloatingPatch, point_set: QuadraturePointSet) -> np.ndarray:
    """Physical lengths of all parent spans of row ``j``."""
    l = _length_row(j)
    sl = point_set.row_slice(l)
    coords = point_set.parent_coord[sl]
    speed = np.linalg.norm(row_tangent(j, coords, patch), axis=1)
    breaks = patch.parent_kvs[j].breakpoints
    span = np.clip(np.searchsorted(breaks, coords, side='right') - 1, 0, breaks.size - 2)
    return np.bincount(span, weights=point_set.parent_weight[sl] * speed, minlength=breaks.size - 1)


def segment_length(k: int, j: int, patch: FloatingPatch, point_set: QuadraturePointSet) -> float:
    """Length of the physical curve segment of parent span ``k`` (zero-based) of row ``j``.

    :param k: span index among the non-empty spans of the row.
    :type k: int
    :param j: row index.
    :type j: int
    :param patch: current patch.
    :type patch: FloatingPatch
    :param point_set: quadrature points of the patch.
    :type point_set: QuadraturePointSet
    :return: quadrature sum of the curve speed over the points inside the span.
    :rtype: float
    """
    lengths = row_segment_lengths(j, patch, point_set)
    if not 0 <= k < lengths.size:
        raise IndexError(f"span {k} out of range for row {j} with {lengths.size} spans")
    return float(lengths[k])


def insertion_matrix(kv: KnotVector, x: float) -> np.ndarray:
    """Matrix mapping the ``n`` coefficients of ``kv`` onto the ``n + 1`` coefficients after inserting ``x``."""
    if kv.periodic:
        raise ValueError("knot insertion into periodic rows is not supported")
    if np.min(np.abs(kv.knots - x)) <= KNOT_TOLERANCE or not 0.0 < x < 1.0:
        raise ValueError(f"{x} is not strictly inside a knot span")
    p = kv.degree
    k = find_span(x, kv)
    u = kv.knots
    n = kv.n_functions
    matrix = np.zeros((n + 1, n))
    for i in range(n + 1):
        if i <= k - p:
            matrix[i, i] = 1.0
        elif i > k:
            matrix[i, i - 1] = 1.0
        else:
            alpha = (x - u[i]) / (u[i + p] - u[i])
            matrix[i, i] = alpha
            matrix[i, i - 1] = 1.0 - alpha
    return matrix


def _bracket(b: int, a: int, l: np.ndarray) -> float:
    if a <= b:
        return float(np.prod([(1.0 - l[r + 1]) / l[r + 1] for r in range(a, b + 1)]) / l[a])
    if a == b + 1:
        return 1.0 / l[a]
    if a == b + 2:
        return 1.0 / (1.0 - l[a])
    raise ValueError(f"bracket [{b}; {a}] is undefined")


def removal_matrix(kv: KnotVector, x: float) -> np.ndarray:
    """Matrix mapping the ``n`` coefficients of ``kv`` onto ``n - 1`` coefficients without the inner knot ``x``.

    Two one-sided recursions reconstruct the affected coefficients from the left and from the right;
    they agree when ``x`` is removable and are blended otherwise so that the larger of the two
    weighted coefficient defects is as small as possible.
    """
    if kv.periodic:
        raise ValueError("knot removal from periodic rows is not supported")
    hits = np.flatnonzero(np.abs(kv.knots - x) <= KNOT_TOLERANCE)
    p = kv.degree
    if hits.size != 1 or not p < hits[0] < kv.knots.size - p - 1:
        raise ValueError(f"{x} is not a unique inner knot")
    k = int(hits[0])
    u = kv.knots
    n = kv.n_functions
    fine = np.eye(n)
    matrix = np.zeros((n - 1, n))
    matrix[:k - p] = fine[:k - p]
    matrix[k - 1:] = fine[k:]
    if p == 1:
        return matrix

    # l[1] = 1; l[r] for r = 2..p+1 are the insertion ratios of the affected coefficients
    l = np.ones(p + 2)
    for r in range(2, p + 2):
        lo = k - p + r - 2
        l[r] = (u[k] - u[lo]) / (u[k + r - 1] - u[lo])

    forward = {1: fine[k - p - 1]}
    for r in range(2, p + 1):
        forward[r] = (fine[k - p + r - 2] - (1.0 - l[r]) * forward[r - 1]) / l[r]
    backward = {p + 1: fine[k]}
    for r in range(p, 1, -1):
        backward[r] = (fine[k - p + r - 1] - l[r + 1] * backward[r + 1]) / (1.0 - l[r + 1])

    terms = [_bracket(p, t + 1, l) for t in range(1, p + 1)]
    gamma = sum(terms)
    for r in range(1, p):
        mu = sum(terms[:r]) / gamma
        matrix[k - p + r - 1] = (1.0 - mu) * forward[r + 1] + mu * backward[r + 1]
    return matrix


def _transform_row(patch: FloatingPatch, j: int, kv: KnotVector, matrix: np.ndarray) -> FloatingPatch:
    parent_kvs = list(patch.parent_kvs)
    parent_kvs[j] = kv
    regulation = list(patch.regulation_points)
    regulation[j] = matrix @ patch.regulation_points[j]
    controls = list(patch.control_points)
    controls[j] = matrix @ patch.control_points[j]
    fields = {}
    for name, rows in patch.field_controls.items():
        rows = list(rows)
        rows[j] = matrix @ rows[j]
        fields[name] = tuple(rows)
    return FloatingPatch(tuple(parent_kvs), patch.normal_kv, tuple(regulation), tuple(controls), fields)


def insert_knot(j: int, xt_plus: float, patch: FloatingPatch) -> FloatingPatch:
    """Insert ``xt_plus`` into the parent knot vector of row ``j``; geometry and floating map are preserved."""
    kv = patch.parent_kvs[j]
    matrix = insertion_matrix(kv, xt_plus)
    return _transform_row(patch, j, kv.with_knot(xt_plus), matrix)


def remove_knot(j: int, xt_minus: float, patch: FloatingPatch) -> FloatingPatch:
    """Remove the inner knot ``xt_minus`` from row ``j``; exact only if the knot is removable."""
    kv = patch.parent_kvs[j]
    matrix = removal_matrix(kv, xt_minus)
    return _transform_row(patch, j, kv.without_knot(xt_minus), matrix)


def _check_density(j: int, x: float, point_set: QuadraturePointSet, n_rows: int) -> None:
    for l, quad_kv in enumerate(point_set.quad_kvs):
        if j not in (s_of_l(l, n_rows), n_of_l(l, n_rows)):
            continue
        if np.min(np.abs(quad_kv.breakpoints - x)) > 1e-12:
            raise DensityExceeded(f"knot {x:.6g} of row {j} is not resolved by quadrature row {l} "
                                  f"({quad_kv.n_spans} spans); raise the density factor")


def adapt(patch: FloatingPatch, point_set: QuadraturePointSet, policy: RefinementPolicy,
          step: int | None = None) -> AdaptResult:
    """One refinement sweep over all open rows.

    Spans longer than the insertion threshold are split at their center. Spans shorter than the
    removal threshold lose their left bounding inner knot (the right one for the first span), unless
    the merged span would exceed the insertion threshold or the row would drop below ``p + 1``
    functions. Removals that break monotonicity of the floating map are reverted.

    :raises DensityExceeded: if an inserted knot is not a breakpoint of the quadrature knot vectors.
    """
    result = AdaptResult(patch)
    if patch.periodic:
        logger.debug("skipping refinement of periodic rows")
        return result
    for j in range(patch.n_rows):
        lengths = row_segment_lengths(j, result.patch, point_set)
        breaks = result.patch.parent_kvs[j].breakpoints
        split = set()
        for k in np.flatnonzero(lengths > policy.insert_threshold):
            x = 0.5 * (breaks[k] + breaks[k + 1])
            _check_density(j, x, point_set, patch.n_rows)
            result.patch = insert_knot(j, x, result.patch)
            result.events.append(RefinementEvent(j, float(x), "insert", step))
            split.add(int(k))

        merged = set()
        for k in np.flatnonzero(lengths < policy.remove_threshold):
            k = int(k)
            if k in split:
                continue
            side = k - 1 if k > 0 else k + 1
            if side in merged or k in merged or side in split or lengths[k] + lengths[side] > policy.insert_threshold:
                continue
            x = float(breaks[k] if k > 0 else breaks[1])
            if result.patch.parent_kvs[j].n_spans < 2:
                continue
            candidate = remove_knot(j, x, result.patch)
            if not is_monotone(candidate):
                logger.warning("reverted removal of knot %.6g in row %d: floating map not monotone", x, j)
                continue
            result.patch = candidate
            result.events.append(RefinementEvent(j, x, "remove", step))
            merged.update((k, side))
    if result.events:
        logger.info("refinement: %d insertions, %d removals", result.n_inserted, result.n_removed)
    return result
