"""Floating tensor-product bases on a single patch.

Index convention: all row, function and running indices in code are zero-based. Row ``j`` here is
row ``j + 1`` in the usual one-based notation, and likewise for function indices ``i`` and the running
index ``m``. Quadrature rows ``l`` follow the same rule.

A row ``j`` owns a parent knot vector, its floating regulation points ``h_ij`` and its control points
``c_ij``. The floating map ``G_j(xt) = sum_i h_ij N_ij(xt)`` pushes parent coordinates ``xt`` to the
parametric coordinate ``xi``; characteristic functions are the push-forwards of the parent functions.
Rows are glued in the normal direction ``eta`` by the linear functions of the normal knot vector.

Periodic rows store one value per unique function; local function ``i`` of the extended periodic basis
aliases unique point ``i mod I_j`` and its regulation value is lifted by ``i // I_j`` so that
``G_j(xt + 1) = G_j(xt) + 1``.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np

from errors import NonConvergence, SingularMap
from spline_core import KnotVector, basis_ders_batch, find_spans, legendre_stencil

if TYPE_CHECKING:
    from quadrature import QuadraturePointSet

logger = logging.getLogger(__name__)

INVERSE_TOLERANCE = 1e-12
INVERSE_MAX_ITERATIONS = 50
SINGULAR_DETERMINANT = 1e-14
MONOTONE_THRESHOLD = 1e-8


def _frozen(values, shape_tail: tuple = ()) -> np.ndarray:
    array = np.array(values, dtype=float)
    if shape_tail and array.size == 0:
        array = array.reshape((0,) + shape_tail)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class FloatingPatch:
    """Discretization state of one floating patch.

    The patch is immutable; regulation, refinement and time stepping produce new instances
    through :meth:`replace_rows` style transactions.

    :ivar parent_kvs: parent knot vector of every row (degree p each).
    :type parent_kvs: tuple[KnotVector, ...]
    :ivar normal_kv: linear knot vector in the normal direction, one function per row.
    :type normal_kv: KnotVector
    :ivar regulation_points: floating regulation points, one array of length ``I_j`` per row.
    :type regulation_points: tuple[numpy.ndarray, ...]
    :ivar control_points: physical control points, one ``(I_j, 2)`` array per row.
    :type control_points: tuple[numpy.ndarray, ...]
    :ivar field_controls: named per-control-point variables, one ``(I_j, k)`` array per row.
    :type field_controls: dict[str, tuple[numpy.ndarray, ...]]
    """
    parent_kvs: tuple[KnotVector, ...]
    normal_kv: KnotVector
    regulation_points: tuple[np.ndarray, ...]
    control_points: tuple[np.ndarray, ...]
    field_controls: dict[str, tuple[np.ndarray, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "parent_kvs", tuple(self.parent_kvs))
        object.__setattr__(self, "regulation_points", tuple(_frozen(h) for h in self.regulation_points))
        object.__setattr__(self, "control_points", tuple(_frozen(c, (2,)).reshape(-1, 2) for c in self.control_points))
        fields = {}
        for name, rows in self.field_controls.items():
            fields[name] = tuple(_frozen(np.asarray(v, dtype=float).reshape(len(v), -1)) for v in rows)
        object.__setattr__(self, "field_controls", fields)
        self._validate_structure()

    def _validate_structure(self) -> None:
        n_rows = len(self.parent_kvs)
        if n_rows < 2:
            raise ValueError(f"a patch needs at least two rows, got {n_rows}")
        if self.normal_kv.degree != 1 or self.normal_kv.periodic or self.normal_kv.n_functions != n_rows:
            raise ValueError("normal knot vector must be open, linear and carry one function per row")
        degrees = {kv.degree for kv in self.parent_kvs}
        if len(degrees) != 1:
            raise ValueError(f"all rows must share one degree, got {sorted(degrees)}")
        if len({kv.periodic for kv in self.parent_kvs}) != 1:
            raise ValueError("rows must be either all periodic or all open")
        if len(self.regulation_points) != n_rows or len(self.control_points) != n_rows:
            raise ValueError("regulation points and control points need one entry per row")
        for j, kv in enumerate(self.parent_kvs):
            count = self.row_count(j)
            if self.regulation_points[j].shape != (count,):
                raise ValueError(f"row {j}: expected {count} regulation points, got {self.regulation_points[j].shape}")
            if self.control_points[j].shape != (count, 2):
                raise ValueError(f"row {j}: expected {count} control points, got {self.control_points[j].shape}")
            for name, rows in self.field_controls.items():
                if len(rows) != n_rows or rows[j].shape[0] != count:
                    raise ValueError(f"field '{name}' row {j} does not match {count} control points")
            if not kv.periodic:
                h = self.regulation_points[j]
                if abs(h[0]) > 1e-12 or abs(h[-1] - 1.0) > 1e-12:
                    raise ValueError(f"row {j}: regulation points must be anchored at 0 and 1")

    # --- structure -------------------------------------------------------------------------
    @property
    def degree(self) -> int:
        return self.parent_kvs[0].degree

    @property
    def n_rows(self) -> int:
        return len(self.parent_kvs)

    @property
    def periodic(self) -> bool:
        return self.parent_kvs[0].periodic

    def row_count(self, j: int) -> int:
        """Number of unique control points ``I_j`` of row ``j``."""
        kv = self.parent_kvs[j]
        return kv.n_spans if kv.periodic else kv.n_functions

    @property
    def row_counts(self) -> list[int]:
        return [self.row_count(j) for j in range(self.n_rows)]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.row_counts)]).astype(int)

    @property
    def n_dofs(self) -> int:
        return int(sum(self.row_counts))

    def local_to_unique(self, j: int) -> np.ndarray:
        """Map from the local functions of row ``j`` to its unique control point indices."""
        n_local = self.parent_kvs[j].n_functions
        return np.arange(n_local) % self.row_count(j)

    def local_regulation(self, j: int) -> np.ndarray:
        """Regulation values per local function, lifted across the periodic seam."""
        local = np.arange(self.parent_kvs[j].n_functions)
        count = self.row_count(j)
        return self.regulation_points[j][local % count] + local // count

    def local_values(self, j: int, name: str | None = None) -> np.ndarray:
        """Control points (``name=None``) or a field, expanded to the local functions of row ``j``."""
        rows = self.control_points if name is None else self.field_controls[name]
        return rows[j][self.local_to_unique(j)]

    def anchored_dofs(self) -> np.ndarray:
        """Running indices of regulation points held fixed during regulation."""
        if self.periodic:
            return np.array([0])
        offsets = self.offsets
        return np.sort(np.concatenate([offsets[:-1], offsets[1:] - 1]))

    # --- transactions ----------------------------------------------------------------------
    def replace_rows(self, **changes) -> Self:
        """New patch with some attributes swapped out; the receiver is left untouched."""
        return replace(self, **changes)

    def with_regulation(self, regulation_points) -> Self:
        return replace(self, regulation_points=tuple(regulation_points))

    def with_control_points(self, control_points) -> Self:
        return replace(self, control_points=tuple(control_points))

    def with_field(self, name: str, rows) -> Self:
        fields = dict(self.field_controls)
        fields[name] = tuple(rows)
        return replace(self, field_controls=fields)

    def regulation_vector(self) -> np.ndarray:
        return np.concatenate(self.regulation_points)

    def split_rows(self, vector: np.ndarray) -> list[np.ndarray]:
        """Cut a running-index vector (or array with leading running index) into rows."""
        offsets = self.offsets
        return [np.array(vector[offsets[j]:offsets[j + 1]]) for j in range(self.n_rows)]

    # --- serialization ---------------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "parent_kvs": [kv.to_dict() for kv in self.parent_kvs],
            "normal_kv": self.normal_kv.to_dict(),
            "regulation_points": [h.tolist() for h in self.regulation_points],
            "control_points": [c.tolist() for c in self.control_points],
            "field_controls": {name: [v.tolist() for v in rows] for name, rows in self.field_controls.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(
            parent_kvs=tuple(KnotVector.from_dict(kv) for kv in data["parent_kvs"]),
            normal_kv=KnotVector.from_dict(data["normal_kv"]),
            regulation_points=tuple(np.asarray(h, dtype=float) for h in data["regulation_points"]),
            control_points=tuple(np.asarray(c, dtype=float).reshape(-1, 2) for c in data["control_points"]),
            field_controls={
                name: tuple(np.asarray(v, dtype=float).reshape(len(v), -1) for v in rows)
                for name, rows in data.get("field_controls", {}).items()
            },
        )

    def save(self, file_path: str | Path) -> None:
        Path(file_path).write_text(json.dumps(self.to_dict(), indent=2))
        logger.debug("saved patch with %d rows to %s", self.n_rows, file_path)

    @classmethod
    def load(cls, file_path: str | Path) -> Self:
        return cls.from_dict(json.loads(Path(file_path).read_text()))


@dataclass(frozen=True, eq=False)
class ConnectivitySets:
    """Index sets coupled at one quadrature point.

    :ivar supported_row_indices: unique function indices of the supported row s.
    :type supported_row_indices: tuple[int, ...]
    :ivar neighbor_row_indices: unique function indices of the neighbor row n.
    :type neighbor_row_indices: tuple[int, ...]
    :ivar normal_indices: the two normal functions, sorted.
    :type normal_indices: tuple[int, int]
    :ivar bivariate_tuples: ``(i, j)`` pairs of all coupled bivariate functions.
    :type bivariate_tuples: tuple[tuple[int, int], ...]
    """
    supported_row_indices: tuple[int, ...]
    neighbor_row_indices: tuple[int, ...]
    normal_indices: tuple[int, int]
    bivariate_tuples: tuple[tuple[int, int], ...]


@dataclass(frozen=True, eq=False)
class CoordinateBundle:
    """Coordinates of a batch of quadrature points.

    :ivar parent_coord: parent coordinate in the supported row.
    :ivar neighbor_parent_coord: pullback of the point into the neighbor row.
    :ivar normal_coord: normal coordinate.
    :ivar supported_row: supported row s.
    :ivar neighbor_row: neighbor row n.
    :ivar normal_span: normal span the point belongs to (fixes one-sided normal derivatives).
    """
    parent_coord: np.ndarray
    neighbor_parent_coord: np.ndarray
    normal_coord: np.ndarray
    supported_row: np.ndarray
    neighbor_row: np.ndarray
    normal_span: np.ndarray


@dataclass(frozen=True, eq=False)
class TupleEvaluation:
    """Bivariate functions supported at a batch of points; supported row first, neighbor second.

    Arrays are indexed ``[point, tuple]`` with ``2 * (p + 1)`` tuples per point.
    """
    dofs: np.ndarray
    local_index: np.ndarray
    values: np.ndarray
    param_grads: np.ndarray
    regulation: np.ndarray
    controls: np.ndarray
    supported_values: np.ndarray
    supported_derivs: np.ndarray
    neighbor_values: np.ndarray
    neighbor_derivs: np.ndarray
    supported_jacobian: np.ndarray
    neighbor_jacobian: np.ndarray
    supported_normal_deriv: np.ndarray
    neighbor_normal_deriv: np.ndarray


def _scalar_or_array(result: np.ndarray, like):
    return float(result[0]) if np.ndim(like) == 0 else result


def _row_combination(j: int, xt, patch: FloatingPatch, local_values: np.ndarray, order: int = 0) -> np.ndarray:
    """``sum_i v_i d^order N_ij(xt)`` for per-local-function values ``v``."""
    kv = patch.parent_kvs[j]
    ders, first = basis_ders_batch(xt, kv, order)
    gathered = local_values[first[:, None] + np.arange(kv.degree + 1)]
    if gathered.ndim == 2:
        return np.einsum('pr,pr->p', gathered, ders[:, order])
    return np.einsum('pra,pr->pa', gathered, ders[:, order])


def floating_map(j: int, xt, patch: FloatingPatch):
    """Floating map ``G_j`` at parent coordinate(s) ``xt``.

    :param j: row index.
    :type j: int
    :param xt: parent coordinate(s) in [0, 1].
    :param patch: patch holding the regulation points.
    :type patch: FloatingPatch
    :return: parametric coordinate(s).
    """
    return _scalar_or_array(_row_combination(j, xt, patch, patch.local_regulation(j)), xt)


def floating_jacobian(j: int, xt, patch: FloatingPatch):
    """Scalar Jacobian ``dG_j/dxt``."""
    return _scalar_or_array(_row_combination(j, xt, patch, patch.local_regulation(j), order=1), xt)


def row_curve(j: int, xt, patch: FloatingPatch, name: str | None = None) -> np.ndarray:
    """Physical curve ``sum_i c_ij N_ij(xt)`` of row ``j`` (or a field along it), shape ``(P, k)``."""
    return _row_combination(j, np.atleast_1d(xt), patch, patch.local_values(j, name))


def row_tangent(j: int, xt, patch: FloatingPatch) -> np.ndarray:
    """Curve derivative ``sum_i c_ij dN_ij/dxt`` of row ``j`` at parent coordinate(s), shape ``(P, 2)``."""
    return _row_combination(j, np.atleast_1d(xt), patch, patch.local_values(j), order=1)


def inverse_floating_map(j: int, x, patch: FloatingPatch, guess=None):
    """Parent coordinate(s) ``xt`` with ``G_j(xt) = x``.

    Newton iteration warm-started from ``guess`` and safeguarded by a shrinking bracket; steps
    leaving the bracket are replaced by bisection. Periodic rows first wrap ``x`` into
    ``[G_j(0), G_j(0) + 1)``.

    :raises NonConvergence: if the residual stays above 1e-12.
    """
    target = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    kv = patch.parent_kvs[j]
    local = patch.local_regulation(j)
    if kv.periodic:
        start = float(_row_combination(j, 0.0, patch, local)[0])
        target = start + np.mod(target - start, 1.0)
        initial = np.clip(target - start, 0.0, 1.0)
    else:
        initial = np.clip(target, 0.0, 1.0)
    y = initial if guess is None else np.clip(np.broadcast_to(np.asarray(guess, dtype=float), target.shape), 0.0, 1.0).copy()
    lo = np.zeros_like(target)
    hi = np.ones_like(target)
    done = np.zeros(target.shape, dtype=bool)
    for _ in range(INVERSE_MAX_ITERATIONS):
        ders, first = basis_ders_batch(y, kv, 1)
        gathered = local[first[:, None] + np.arange(kv.degree + 1)]
        value = np.einsum('pr,pr->p', gathered, ders[:, 0])
        slope = np.einsum('pr,pr->p', gathered, ders[:, 1])
        residual = value - target
        done = np.abs(residual) <= INVERSE_TOLERANCE
        if np.all(done):
            break
        hi = np.where(residual > 0.0, y, hi)
        lo = np.where(residual < 0.0, y, lo)
        with np.errstate(divide='ignore', invalid='ignore'):
            newton = y - residual / slope
        bad = ~np.isfinite(newton) | (slope <= 0.0) | (newton <= lo) | (newton >= hi)
        y = np.where(done, y, np.where(bad, 0.5 * (lo + hi), newton))
        if np.all(done | (hi - lo < 1e-17)):
            break
    if not np.all(done):
        worst = int(np.argmax(~done))
        raise NonConvergence(f"inverse floating map of row {j} did not converge for xi={target[worst]:.16g}")
    return _scalar_or_array(y, x)


def characteristic_row(j: int, x, patch: FloatingPatch, guess=None) -> np.ndarray:
    """All characteristic functions of row ``j`` at parametric coordinate(s) ``x``, shape ``(P, I_j)``."""
    xt = np.atleast_1d(inverse_floating_map(j, x, patch, guess))
    kv = patch.parent_kvs[j]
    ders, first = basis_ders_batch(xt, kv, 0)
    count = patch.row_count(j)
    out = np.zeros((xt.size, count))
    rows = np.arange(xt.size)
    for r in range(kv.degree + 1):
        np.add.at(out, (rows, (first + r) % count), ders[:, 0, r])
    return out


def characteristic_basis(i: int, j: int, x: float, patch: FloatingPatch) -> float:
    """Characteristic function ``i`` of row ``j`` at parametric coordinate ``x``."""
    if not 0 <= i < patch.row_count(j):
        raise IndexError(f"function index {i} out of range for row {j}")
    return float(characteristic_row(j, x, patch)[0, i])


def normal_basis(j: int, eta: float, patch: FloatingPatch) -> float:
    ders, first = basis_ders_batch(eta, patch.normal_kv, 0)
    r = j - int(first[0])
    return float(ders[0, 0, r]) if 0 <= r <= 1 else 0.0


def bivariate_basis(i: int, j: int, xi: tuple[float, float], patch: FloatingPatch) -> float:
    """Floating tensor-product function ``B_ij(xi, eta) = N_ij(xi) M_j(eta)``."""
    normal = normal_basis(j, xi[1], patch)
    if normal == 0.0:
        return 0.0
    return characteristic_basis(i, j, xi[0], patch) * normal


def _combine_rows(xi_points: np.ndarray, patch: FloatingPatch, row_values) -> np.ndarray:
    """``sum_j M_j(eta) sum_i v_ij N_ij(xi)`` at a batch of parametric points."""
    xi_points = np.atleast_2d(np.asarray(xi_points, dtype=float))
    normal, first = basis_ders_batch(xi_points[:, 1], patch.normal_kv, 0)
    sample = row_values(0)
    out = np.zeros((xi_points.shape[0],) + sample.shape[1:])
    for r in range(2):
        rows = first + r
        for j in np.unique(rows):
            mask = (rows == j) & (normal[:, 0, r] != 0.0)
            if not np.any(mask):
                continue
            curve = characteristic_row(j, xi_points[mask, 0], patch) @ row_values(j)
            weight = normal[mask, 0, r].reshape((-1,) + (1,) * (curve.ndim - 1))
            out[mask] += weight * curve
    return out


def physical_map(xi, patch: FloatingPatch) -> np.ndarray:
    """Physical position(s) ``F(xi, eta)``; accepts one point or an ``(P, 2)`` batch."""
    result = _combine_rows(xi, patch, lambda j: patch.control_points[j])
    return result[0] if np.ndim(xi) == 1 else result


def field_at(xi, patch: FloatingPatch, name: str) -> np.ndarray:
    """Field ``name`` interpolated at parametric point(s)."""
    result = _combine_rows(xi, patch, lambda j: patch.field_controls[name][j])
    return result[0] if np.ndim(xi) == 1 else result


def parametric_ansatz(xi, patch: FloatingPatch):
    """``sum_m h_m B_m(xi, eta)``, which reproduces ``xi`` for every admissible regulation state."""
    xi_points = np.atleast_2d(np.asarray(xi, dtype=float))
    normal, first = basis_ders_batch(xi_points[:, 1], patch.normal_kv, 0)
    out = np.zeros(xi_points.shape[0])
    for r in range(2):
        rows = first + r
        for j in np.unique(rows):
            mask = (rows == j) & (normal[:, 0, r] != 0.0)
            if not np.any(mask):
                continue
            xt = np.atleast_1d(inverse_floating_map(j, xi_points[mask, 0], patch))
            out[mask] += normal[mask, 0, r] * _row_combination(j, xt, patch, patch.local_regulation(j))
    return float(out[0]) if np.ndim(xi) == 1 else out


def evaluate_tuples(bundle: CoordinateBundle, patch: FloatingPatch) -> TupleEvaluation:
    """Values and parametric gradients of every bivariate function coupled at the points of ``bundle``.

    For the supported row the gradient is ``(dN/dxt / J_s, N dM_s/deta)``; the neighbor row only
    contributes through ``N(xt_sn) dM_n/deta`` and has zero value.
    """
    p = patch.degree
    n_pts = bundle.parent_coord.size
    width = p + 1
    offsets = patch.offsets
    breaks = patch.normal_kv.breakpoints
    delta = breaks[bundle.normal_span + 1] - breaks[bundle.normal_span]
    d_m_s = np.where(bundle.supported_row == bundle.normal_span, -1.0, 1.0) / delta
    d_m_n = -d_m_s

    arrays = {}
    for role, rows, coords in (("s", bundle.supported_row, bundle.parent_coord),
                               ("n", bundle.neighbor_row, bundle.neighbor_parent_coord)):
        values = np.zeros((n_pts, width))
        derivs = np.zeros((n_pts, width))
        local = np.zeros((n_pts, width), dtype=int)
        dofs = np.zeros((n_pts, width), dtype=int)
        regulation = np.zeros((n_pts, width))
        controls = np.zeros((n_pts, width, 2))
        for j in np.unique(rows):
            mask = rows == j
            kv = patch.parent_kvs[j]
            ders, first = basis_ders_batch(coords[mask], kv, 1)
            idx = first[:, None] + np.arange(width)
            values[mask] = ders[:, 0]
            derivs[mask] = ders[:, 1]
            local[mask] = idx
            dofs[mask] = offsets[j] + patch.local_to_unique(j)[idx]
            regulation[mask] = patch.local_regulation(j)[idx]
            controls[mask] = patch.local_values(j)[idx]
        arrays[role] = (values, derivs, local, dofs, regulation, controls)

    ns, dns, local_s, dofs_s, reg_s, ctl_s = arrays["s"]
    nn, dnn, local_n, dofs_n, reg_n, ctl_n = arrays["n"]
    if patch.periodic:
        # pullbacks are wrapped into one period of the neighbor row; restore G_n(xt_sn) = G_s(xt)
        lift = np.round(np.einsum('pr,pr->p', reg_s, ns) - np.einsum('pr,pr->p', reg_n, nn))
        reg_n = reg_n + lift[:, None]
    j_s =np.einsum('pr,pr->p', reg_s, dns)
    j_n = np.einsum('pr,pr->p', reg_n, dnn)
    if np.any(j_s <= 0.0) or np.any(j_n <= 0.0):
        raise SingularMap("floating map Jacobian is not positive at a quadrature point")

    grads = np.zeros((n_pts, 2 * width, 2))
    grads[:, :width, 0] = dns / j_s[:, None]
    grads[:, :width, 1] = ns * d_m_s[:, None]
    grads[:, width:, 1] = nn * d_m_n[:, None]
    values = np.concatenate([ns, np.zeros_like(nn)], axis=1)
    return TupleEvaluation(
        dofs=np.concatenate([dofs_s, dofs_n], axis=1),
        local_index=np.concatenate([local_s, local_n], axis=1),
        values=values,
        param_grads=grads,
        regulation=np.concatenate([reg_s, reg_n], axis=1),
        controls=np.concatenate([ctl_s, ctl_n], axis=1),
        supported_values=ns,
        supported_derivs=dns,
        neighbor_values=nn,
        neighbor_derivs=dnn,
        supported_jacobian=j_s,
        neighbor_jacobian=j_n,
        supported_normal_deriv=d_m_s,
        neighbor_normal_deriv=d_m_n,
    )


def jacobian_from_tuples(tuples: TupleEvaluation) -> np.ndarray:
    """Physical Jacobians ``J[a, b] = sum c_a dB/dxi_b``, shape ``(P, 2, 2)``."""
    return np.einsum('pta,ptb->pab', tuples.controls, tuples.param_grads)


def physical_jacobian(bundle: CoordinateBundle, patch: FloatingPatch) -> np.ndarray:
    """Physical Jacobian(s) at the points of a coordinate bundle.

    :raises SingularMap: if any determinant magnitude drops below 1e-14.
    """
    jacobians = jacobian_from_tuples(evaluate_tuples(bundle, patch))
    det = np.linalg.det(jacobians)
    if np.any(np.abs(det) < SINGULAR_DETERMINANT):
        raise SingularMap(f"physical Jacobian is singular (min |det| = {np.min(np.abs(det)):.3e})")
    return jacobians[0] if bundle.parent_coord.size == 1 else jacobians


def running_index(i: int, j: int, patch: FloatingPatch) -> int:
    """Running index ``m = sum_{gamma < j} I_gamma + i``."""
    if not 0 <= j < patch.n_rows or not 0 <= i < patch.row_count(j):
        raise IndexError(f"tuple ({i}, {j}) out of range")
    return int(patch.offsets[j] + i)


def unpack(m: int, patch: FloatingPatch) -> tuple[int, int]:
    """Inverse of :func:`running_index`."""
    if not 0 <= m < patch.n_dofs:
        raise IndexError(f"running index {m} out of range 0..{patch.n_dofs - 1}")
    j = int(np.searchsorted(patch.offsets, m, side='right') - 1)
    return m - int(patch.offsets[j]), j


def connectivities(g: int, l: int, patch: FloatingPatch, point_set: "QuadraturePointSet") -> ConnectivitySets:
    """Index sets coupled at quadrature point ``(g, l)``."""
    k = point_set.point_index(g, l)
    s = int(point_set.supported_row[k])
    n = int(point_set.neighbor_row[k])
    p = patch.degree
    supported = []
    neighbor = []
    for row, coord, out in ((s, point_set.parent_coord[k], supported),
                            (n, point_set.neighbor_parent_coord[k], neighbor)):
        first = int(find_spans(coord, patch.parent_kvs[row])[0]) - p
        count = patch.row_count(row)
        out.extend(int((first + r) % count) for r in range(p + 1))
    normal = tuple(sorted((s, n)))
    tuples = tuple((i, s) for i in supported) + tuple((i, n) for i in neighbor)
    return ConnectivitySets(tuple(supported), tuple(neighbor), normal, tuples)


def greville_regulation(kvs) -> list[np.ndarray]:
    """Regulation points that make every floating map the identity."""
    result = []
    for kv in kvs:
        g = kv.greville()
        result.append(g[:kv.n_spans] if kv.periodic else g)
    return result


def min_floating_jacobians(patch: FloatingPatch) -> np.ndarray:
    """Smallest ``dG_j/dxt`` over the parent Legendre nodes (p + 1 per span) of every row."""
    result = np.empty(patch.n_rows)
    for j, kv in enumerate(patch.parent_kvs):
        nodes = legendre_stencil(kv, kv.degree + 1).coordinates
        result[j] = np.min(_row_combination(j, nodes, patch, patch.local_regulation(j), order=1))
    return result


def is_monotone(patch: FloatingPatch, threshold: float = MONOTONE_THRESHOLD) -> bool:
    return bool(np.all(min_floating_jacobians(patch) > threshold))
