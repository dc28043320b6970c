"""Automated floating regulation.

The floating regulation points are chosen so that the parametric coordinate ``xi``, seen as a field on
the physical domain, solves the Laplace equation with ``xi = 0`` / ``xi = 1`` on the row ends and natural
conditions on the normal boundaries. The residual is nonlinear in the regulation points because the basis
functions themselves float with them; the Newton tangent below differentiates through the floating maps,
the neighbor pullbacks, the physical Jacobian and the weights.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from errors import NonConvergence, RegulationFailure, SingularMap
from floating_basis import FloatingPatch, is_monotone, min_floating_jacobians
from linear_solvers import DENSE_LIMIT, solve_general
from quadrature import PointEvaluation, QuadraturePointSet, evaluate_points, refresh_neighbor_pullbacks

logger = logging.getLogger(__name__)

ALIGNMENT_WARNING_DEGREES = 30.0
STAGNATION_FACTOR = 100.0


@dataclass
class RegulationSettings:
    """Newton controls of the regulation solve.

    :ivar tolerance: infinity-norm target of the residual per unit patch diameter.
    :ivar max_iterations: Newton iterations before giving up.
    :ivar max_halvings: step halvings of the backtracking line search.
    :ivar monotone_threshold: smallest admissible floating-map Jacobian.
    :ivar threads: assembly threads.
    """
    tolerance: float = 1e-10
    max_iterations: int = 25
    max_halvings: int = 10
    monotone_threshold: float = 1e-8
    threads: int = 1


@dataclass
class RegulationSystem:
    """Residual and tangent restricted to the free regulation points."""
    free_dof_map: np.ndarray
    residual: np.ndarray
    tangent: scipy.sparse.csr_matrix | None
    tolerance: float = 1e-10
    max_iterations: int = 25


@dataclass
class RegulationReport:
    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    tolerance: float = 0.0
    converged: bool = False
    max_interface_angle: float = 0.0

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "residual_history": self.residual_history,
                "tolerance": self.tolerance, "converged": self.converged,
                "max_interface_angle": self.max_interface_angle}


@dataclass
class RegulationResult:
    patch: FloatingPatch
    point_set: QuadraturePointSet
    report: RegulationReport


def patch_diameter(patch: FloatingPatch) -> float:
    """Diagonal of the bounding box of all control points."""
    points = np.concatenate(patch.control_points)
    return float(np.linalg.norm(np.ptp(points, axis=0)))


def regulation_tolerance(patch: FloatingPatch, settings: RegulationSettings) -> float:
    return settings.tolerance * patch_diameter(patch)


def free_dofs(patch: FloatingPatch) -> np.ndarray:
    mask = np.ones(patch.n_dofs, dtype=bool)
    mask[patch.anchored_dofs()] = False
    return np.flatnonzero(mask)


def _parametric_field_gradient(evaluation: PointEvaluation) -> np.ndarray:
    return np.einsum('pt,pta->pa', evaluation.tuples.regulation, evaluation.grads)


def _full_residual(patch: FloatingPatch, evaluation: PointEvaluation) -> np.ndarray:
    g = _parametric_field_gradient(evaluation)
    local = np.einsum('pta,pa->pt', evaluation.grads, g) * evaluation.weights[:, None]
    residual = np.zeros(patch.n_dofs)
    np.add.at(residual, evaluation.tuples.dofs, local)
    return residual


def _full_tangent(patch: FloatingPatch, evaluation: PointEvaluation) -> scipy.sparse.csr_matrix:
    t = evaluation.tuples
    width = patch.degree + 1
    n_pts, n_tuples = t.dofs.shape

    # d(param grad_i)/d h_k, indexed [point, i, k, component]
    d_param = np.zeros((n_pts, n_tuples, n_tuples, 2))
    js = t.supported_jacobian
    jn = t.neighbor_jacobian
    d_param[:, :width, :width, 0] = -(t.supported_derivs[:, :, None] * t.supported_derivs[:, None, :]) / (js ** 2)[:, None, None]
    neighbor_slope = (t.neighbor_derivs * t.neighbor_normal_deriv[:, None]) / jn[:, None]
    d_param[:, width:, :width, 1] = neighbor_slope[:, :, None] * t.supported_values[:, None, :]
    d_param[:, width:, width:, 1] = -neighbor_slope[:, :, None] * t.neighbor_values[:, None, :]

    inv = evaluation.inverse_jacobians
    det = evaluation.determinants
    d_jac = np.einsum('poa,pokb->pkab', t.controls, d_param)
    d_inv = -np.einsum('pab,pkbc,pcd->pkad', inv, d_jac, inv)
    d_grad = (np.einsum('pkba,pib->pika', d_inv, t.param_grads)
              + np.einsum('pba,pikb->pika', inv, d_param))
    d_det = det[:, None] * np.einsum('pab,pkba->pk', inv, d_jac)
    base_weight = evaluation.param_weights / js
    d_js = np.zeros((n_pts, n_tuples))
    d_js[:, :width] = t.supported_derivs
    d_weight = (d_det * js[:, None] + det[:, None] * d_js) * base_weight[:, None]

    grads = evaluation.grads
    weight = evaluation.weights
    g = _parametric_field_gradient(evaluation)
    d_g = grads + np.einsum('pm,pmka->pka', t.regulation, d_grad)
    local = (np.einsum('pika,pa->pik', d_grad, g) * weight[:, None, None]
             + np.einsum('pia,pka->pik', grads, d_g) * weight[:, None, None]
             + np.einsum('pia,pa->pi', grads, g)[:, :, None] * d_weight[:, None, :])
    rows = np.broadcast_to(t.dofs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(t.dofs[:, None, :], local.shape).ravel()
    return scipy.sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(patch.n_dofs, patch.n_dofs)).tocsr()


def assemble_residual(patch: FloatingPatch, point_set: QuadraturePointSet, threads: int = 1) -> np.ndarray:
    """Regulation residual on the free regulation points.

    :param patch: patch with the current regulation state.
    :type patch: FloatingPatch
    :param point_set: point set with pullbacks matching ``patch``.
    :type point_set: QuadraturePointSet
    :return: residual restricted to free running indices.
    :rtype: numpy.ndarray
    """
    evaluation = evaluate_points(point_set, patch, threads)
    return _full_residual(patch, evaluation)[free_dofs(patch)]


def assemble_tangent(patch: FloatingPatch, point_set: QuadraturePointSet, threads: int = 1) -> scipy.sparse.csr_matrix:
    """Newton tangent of :func:`assemble_residual` with respect to the free regulation points."""
    evaluation = evaluate_points(point_set, patch, threads)
    free = free_dofs(patch)
    return _full_tangent(patch, evaluation)[free][:, free]


def assemble_system(patch: FloatingPatch, point_set: QuadraturePointSet, settings: RegulationSettings,
                    with_tangent: bool = True) -> tuple[RegulationSystem, PointEvaluation]:
    evaluation = evaluate_points(point_set, patch, settings.threads)
    free = free_dofs(patch)
    residual = _full_residual(patch, evaluation)[free]
    tangent = _full_tangent(patch, evaluation)[free][:, free] if with_tangent else None
    return RegulationSystem(free, residual, tangent, regulation_tolerance(patch, settings),
                            settings.max_iterations), evaluation


def interface_alignment_angle(patch: FloatingPatch, point_set: QuadraturePointSet,
                              evaluation: PointEvaluation) -> float:
    """Largest angle (degrees) between the xi-isoline normals and the boundary rows' tangents."""
    boundary = np.isin(point_set.quad_row, [0, point_set.n_quad_rows - 1])
    tangent = evaluation.jacobians[boundary][:, :, 0]
    gradient = _parametric_field_gradient(evaluation)[boundary]
    cosine = np.abs(np.einsum('pa,pa->p', tangent, gradient))
    cosine /= np.linalg.norm(tangent, axis=1) * np.linalg.norm(gradient, axis=1)
    return float(np.degrees(np.arccos(np.clip(np.min(cosine), 0.0, 1.0)))) if cosine.size else 0.0


def _try_state(patch: FloatingPatch, point_set: QuadraturePointSet, settings: RegulationSettings):
    if not is_monotone(patch, settings.monotone_threshold):
        return None
    try:
        refreshed = refresh_neighbor_pullbacks(point_set, patch)
        system, evaluation = assemble_system(patch, refreshed, settings, with_tangent=False)
    except (NonConvergence, SingularMap):
        return None
    return refreshed, system, evaluation


def solve_regulation(patch: FloatingPatch, point_set: QuadraturePointSet,
                     settings: RegulationSettings | None = None) -> RegulationResult:
    """Newton solve for the floating regulation points; control points are never touched.

    The residual target is ``settings.tolerance`` times the patch diameter; a line search that stalls
    within ``STAGNATION_FACTOR`` of that target is taken as converged.

    :raises RegulationFailure: when Newton or its line search stalls, or the final maps are not monotone.
    """
    settings = settings or RegulationSettings()
    report = RegulationReport()
    report.tolerance = tolerance = regulation_tolerance(patch, settings)
    point_set = refresh_neighbor_pullbacks(point_set, patch)
    system, evaluation = assemble_system(patch, point_set, settings)
    norm = float(np.max(np.abs(system.residual), initial=0.0))
    report.residual_history.append(norm)
    free = system.free_dof_map
    h = patch.regulation_vector()

    while norm > tolerance:
        if report.iterations >= settings.max_iterations:
            raise RegulationFailure(f"regulation did not converge in {settings.max_iterations} iterations "
                                    f"(|R| = {norm:.3e})")
        if system.tangent is None:
            system, evaluation = assemble_system(patch, point_set, settings)
        tangent = system.tangent if free.size > DENSE_LIMIT else system.tangent.toarray()
        delta = solve_general(tangent, -system.residual)
        step = 1.0
        accepted = None
        for _ in range(settings.max_halvings + 1):
            trial_h = h.copy()
            trial_h[free] += step * delta
            trial_patch = patch.with_regulation(patch.split_rows(trial_h))
            outcome = _try_state(trial_patch, point_set, settings)
            if outcome is not None:
                trial_norm = float(np.max(np.abs(outcome[1].residual), initial=0.0))
                if trial_norm < norm:
                    accepted = (trial_h, trial_patch, outcome, trial_norm)
                    break
            step *= 0.5
        if accepted is None:
            if norm <= STAGNATION_FACTOR * tolerance:
                logger.debug("regulation stagnated at |R| = %.3e (target %.3e)", norm, tolerance)
                break
            raise RegulationFailure(f"regulation line search exhausted at iteration {report.iterations} "
                                    f"(|R| = {norm:.3e})")
        h, patch, (point_set, system, evaluation), norm = accepted
        report.iterations += 1
        report.residual_history.append(norm)
        logger.debug("regulation iteration %d: |R| = %.3e (step %.3g)", report.iterations, norm, step)

    if not is_monotone(patch, settings.monotone_threshold):
        raise RegulationFailure(f"regulated floating maps are not monotone (min dG = {np.min(min_floating_jacobians(patch)):.3e})")
    report.converged = True
    report.max_interface_angle = interface_alignment_angle(patch, point_set, evaluation)
    if report.max_interface_angle > ALIGNMENT_WARNING_DEGREES:
        logger.warning("characteristic interfaces deviate %.1f degrees from the boundary rows",
                       report.max_interface_angle)
    return RegulationResult(patch, point_set.with_geometry(evaluation), report)
