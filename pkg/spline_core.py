"""Univariate B-spline layer: knot vectors, Cox-de Boor evaluation and 1D quadrature stencils.

Every routine accepts scalar or array evaluation points. Array input is processed as a batch
(loops run over the degree only), which is how the quadrature layer evaluates thousands of
points per floating update.
"""
from dataclasses import dataclass
from enum import Enum
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np
from numpy.polynomial.legendre import leggauss

MAX_GAUSS_POINTS = 10
KNOT_TOLERANCE = 1e-14

# Gauss-Legendre abscissae/weights on [-1, 1], G = 1..10, built once at import
GAUSS_LEGENDRE_RULES: dict[int, tuple[np.ndarray, np.ndarray]] = {
    g: leggauss(g) for g in range(1, MAX_GAUSS_POINTS + 1)
}


class StencilKind(Enum):
    """Kind of a one-dimensional quadrature stencil.

    :cvar LEGENDRE: G Gauss-Legendre points per non-empty knot span.
    :cvar LOBATTO_2: both end points of every span (two-point Gauss-Lobatto).
    """
    LEGENDRE = 'legendre'
    LOBATTO_2 = 'lobatto-2'


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Non-decreasing knot sequence on [0, 1] together with its polynomial degree.

    Open vectors repeat 0 and 1 exactly ``degree + 1`` times and have unique inner knots.
    Periodic vectors are the uniform extension ``(k - p) / n`` of ``n`` spans beyond both ends
    of [0, 1]; only the ``n + p`` functions living on the extension are represented and the
    evaluation domain remains [0, 1].

    :ivar knots: read-only knot values.
    :type knots: numpy.ndarray
    :ivar degree: polynomial degree p.
    :type degree: int
    :ivar periodic: True for the uniform periodic extension.
    :type periodic: bool
    """
    knots: np.ndarray
    degree: int
    periodic: bool = False

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float).ravel()
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise ValueError(f"degree must be non-negative, got {p}")
        if knots.size < 2 * p + 2:
            raise ValueError(f"a degree {p} knot vector needs at least {2 * p + 2} knots, got {knots.size}")
        if np.any(np.diff(knots) < 0.0):
            raise ValueError("knots must be non-decreasing")
        if self.periodic:
            if np.any(np.diff(knots) <= 0.0):
                raise ValueError("periodic knot vectors must be strictly increasing")
            if abs(knots[p]) > KNOT_TOLERANCE or abs(knots[-p - 1] - 1.0) > KNOT_TOLERANCE:
                raise ValueError("periodic knot vectors must cover [0, 1] between knots p and -p-1")
            return
        if np.any(knots[:p + 1] != 0.0) or np.any(knots[-p - 1:] != 1.0):
            raise ValueError(f"open knot vector must start with {p + 1} zeros and end with {p + 1} ones")
        if np.any(np.diff(knots[p:knots.size - p]) <= 0.0):
            raise ValueError("inner knots must be unique")

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnotVector):
            return NotImplemented
        return (self.degree == other.degree and self.periodic == other.periodic
                and self.knots.shape == other.knots.shape and np.array_equal(self.knots, other.knots))

    __hash__ = None

    @property
    def n_functions(self) -> int:
        return self.knots.size - self.degree - 1

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values bounding the non-empty spans inside [0, 1]."""
        return self.knots[self.degree:self.knots.size - self.degree]

    @property
    def n_spans(self) -> int:
        return self.breakpoints.size - 1

    @property
    def inner_knots(self) -> np.ndarray:
        return self.breakpoints[1:-1]

    @property
    def first_span(self) -> int:
        return self.degree

    @property
    def last_span(self) -> int:
        return self.knots.size - self.degree - 2

    def greville(self) -> np.ndarray:
        """Greville abscissae, the knot averages giving linear precision.

        :return: one abscissa per basis function.
        :rtype: numpy.ndarray
        """
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        return np.array([self.knots[i + 1:i + p + 1].mean() for i in range(self.n_functions)])

    def span_lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def contains_knots_of(self, other: "KnotVector", tol: float = 1e-12) -> bool:
        """True if every breakpoint of ``other`` is also a breakpoint of this vector."""
        mine = self.breakpoints
        return all(np.min(np.abs(mine - x)) <= tol for x in other.breakpoints)

    def with_knot(self, x: float) -> Self:
        """Copy of an open vector with one additional inner knot."""
        if self.periodic:
            raise ValueError("knot insertion into periodic knot vectors is not supported")
        return KnotVector(np.sort(np.append(self.knots, x)), self.degree)

    def without_knot(self, x: float) -> Self:
        """Copy of an open vector with the inner knot ``x`` removed."""
        if self.periodic:
            raise ValueError("knot removal from periodic knot vectors is not supported")
        hits = np.flatnonzero(np.abs(self.knots - x) <= KNOT_TOLERANCE)
        if hits.size != 1 or not (self.degree < hits[0] < self.knots.size - self.degree - 1):
            raise ValueError(f"{x} is not a unique inner knot")
        return KnotVector(np.delete(self.knots, hits[0]), self.degree)

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist(), "degree": self.degree, "periodic": self.periodic}

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(np.asarray(data["knots"], dtype=float), int(data["degree"]), bool(data.get("periodic", False)))


@dataclass(frozen=True, eq=False)
class QuadratureStencil1D:
    """Quadrature points and weights along one parametric axis.

    :ivar coordinates: point coordinates in [0, 1].
    :type coordinates: numpy.ndarray
    :ivar weights: positive weights.
    :type weights: numpy.ndarray
    :ivar kind: rule that produced the stencil.
    :type kind: StencilKind
    :ivar span_ids: zero-based index of the non-empty span each point belongs to.
    :type span_ids: numpy.ndarray
    """
    coordinates: np.ndarray
    weights: np.ndarray
    kind: StencilKind
    span_ids: np.ndarray

    def __len__(self) -> int:
        return self.coordinates.size

    def integrate(self, values) -> float:
        return float(np.dot(np.asarray(values, dtype=float), self.weights))


def make_open_uniform(n_spans: int, degree: int) -> KnotVector:
    """Open uniform knot vector K(n_spans, degree).

    :param n_spans: number of non-empty spans, at least one.
    :type n_spans: int
    :param degree: polynomial degree, at least one.
    :type degree: int
    :return: knot vector of length ``n_spans + 2 * degree + 1``.
    :rtype: KnotVector
    """
    if n_spans < 1:
        raise ValueError(f"n_spans must be positive, got {n_spans}")
    if degree < 1:
        raise ValueError(f"degree must be at least 1, got {degree}")
    inner = np.arange(1, n_spans) / n_spans
    return KnotVector(np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)]), degree)


def make_periodic_uniform(n_spans: int, degree: int) -> KnotVector:
    if n_spans < max(degree, 1) + 1:
        raise ValueError(f"a periodic degree {degree} basis needs more than {degree} spans, got {n_spans}")
    return KnotVector(np.arange(-degree, n_spans + degree + 1) / n_spans, degree, periodic=True)


def make_degree_reduced(kv: KnotVector) -> KnotVector:
    """Same breakpoints, degree lowered by one (Taylor-Hood partner of ``kv``)."""
    p = kv.degree - 1
    if p < 1:
        raise ValueError("degree reduction needs a parent degree of at least 2")
    if kv.periodic:
        return make_periodic_uniform(kv.n_spans, p)
    return KnotVector(np.concatenate([np.zeros(p + 1), kv.inner_knots, np.ones(p + 1)]), p)


def _check_domain(x: np.ndarray) -> None:
    if np.any(x < -KNOT_TOLERANCE) or np.any(x > 1.0 + KNOT_TOLERANCE):
        bad = x[(x < -KNOT_TOLERANCE) | (x > 1.0 + KNOT_TOLERANCE)]
        raise ValueError(f"evaluation point(s) outside [0, 1]: {bad[:5]}")


def find_spans(x, kv: KnotVector) -> np.ndarray:
    """Batch version of :func:`find_span`."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_domain(x)
    spans = np.searchsorted(kv.knots, x, side='right') - 1
    return np.clip(spans, kv.first_span, kv.last_span)


def find_span(x: float, kv: KnotVector) -> int:
    """Index k with knots[k] <= x < knots[k+1]; x = 1 maps to the last non-empty span.

    :param x: evaluation point in [0, 1].
    :type x: float
    :param kv: knot vector.
    :type kv: KnotVector
    :return: span index into ``kv.knots``.
    :rtype: int
    """
    return int(find_spans(x, kv)[0])


def basis_ders_batch(x, kv: KnotVector, max_order: int = 0, spans=None) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the p+1 supported basis functions at a batch of points.

    Triangular Cox-de Boor scheme; knot differences in the triangle never vanish for points
    inside a non-empty span, so the 0/0 = 0 convention of the recursive definition is never hit.

    :param x: evaluation points in [0, 1].
    :param kv: knot vector.
    :type kv: KnotVector
    :param max_order: highest derivative order requested.
    :type max_order: int
    :param spans: optional precomputed span indices.
    :return: ``(ders, first)`` where ``ders[p_idx, k, r]`` is the k-th derivative of function
        ``first[p_idx] + r`` at point ``p_idx``.
    :rtype: tuple[numpy.ndarray, numpy.ndarray]
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    spans = find_spans(x, kv) if spans is None else np.atleast_1d(spans)
    p = kv.degree
    U = kv.knots
    n_pts = x.size
    ders = np.zeros((n_pts, max_order + 1, p + 1))

    ndu = np.zeros((p + 1, p + 1, n_pts))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, n_pts))
    right = np.zeros((p + 1, n_pts))
    for j in range(1, p + 1):
        left[j] = x - U[spans + 1 - j]
        right[j] = U[spans + j] - x
        saved = np.zeros(n_pts)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    for j in range(p + 1):
        ders[:, 0, j] = ndu[j, p]

    n = min(max_order, p)
    a = np.zeros((2, p + 1, n_pts))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = np.zeros(n_pts)
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1
    factor = p
    for k in range(1, n + 1):
        ders[:, k, :] *= factor
        factor *= p - k
    return ders, spans - p


def eval_basis(x: float, kv: KnotVector) -> tuple[np.ndarray, int]:
    """Values of the p+1 supported basis functions at ``x`` and the first supported index."""
    ders, first = basis_ders_batch(x, kv, 0)
    return ders[0, 0], int(first[0])


def eval_basis_derivs(x: float, kv: KnotVector, max_order: int = 1) -> tuple[np.ndarray, int]:
    """Values and up to second derivatives of the supported functions at ``x``.

    :return: ``(ders, first)`` with ``ders[k]`` the k-th derivatives of functions
        ``first .. first + p``.
    :rtype: tuple[numpy.ndarray, int]
    """
    if max_order not in (1, 2):
        raise ValueError(f"max_order must be 1 or 2, got {max_order}")
    ders, first = basis_ders_batch(x, kv, max_order)
    return ders[0], int(first[0])


def legendre_stencil(kv: KnotVector, points_per_span: int) -> QuadratureStencil1D:
    """G-point Gauss-Legendre rule mapped into every non-empty span of ``kv``."""
    if not 1 <= points_per_span <= MAX_GAUSS_POINTS:
        raise ValueError(f"points_per_span must be in 1..{MAX_GAUSS_POINTS}, got {points_per_span}")
    nodes, weights = GAUSS_LEGENDRE_RULES[points_per_span]
    a = kv.breakpoints[:-1, None]
    b = kv.breakpoints[1:, None]
    coordinates = a + 0.5 * (b - a) * (nodes[None, :] + 1.0)
    scaled = 0.5 * (b - a) * weights[None, :]
    span_ids = np.repeat(np.arange(kv.n_spans), points_per_span)
    return QuadratureStencil1D(coordinates.ravel(), scaled.ravel(), StencilKind.LEGENDRE, span_ids)


def lobatto2_stencil(kv: KnotVector) -> QuadratureStencil1D:
    """Two-point Gauss-Lobatto rule per span; inner knots appear once from each side."""
    a = kv.breakpoints[:-1]
    b = kv.breakpoints[1:]
    coordinates = np.column_stack([a, b]).ravel()
    half = 0.5 * (b - a)
    weights = np.column_stack([half, half]).ravel()
    return QuadratureStencil1D(coordinates, weights, StencilKind.LOBATTO_2, np.repeat(np.arange(kv.n_spans), 2))
