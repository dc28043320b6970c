"""Quasi-static incompressible Lagrangian mechanics on a floating patch.

Every time step solves the Stokes-type saddle point problem on the current configuration with the
polymer stress of the previous step as a known load, integrates the polymer stress explicitly, and
moves the control points with the computed velocities. Every ``floating_interval`` steps the
floating regulation is re-solved and the parent knot vectors are adapted.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import scipy.sparse

from constitutive import MaterialParams, MaterialState, oldroyd_b_update
from contact import BoundaryPointSet, BoundarySide, ContactParams, build_boundary_points, contact_contributions
from errors import AssemblyMismatch, FligaError, NewtonDivergence, RegulationFailure, StabilityAbort
from floating_basis import FloatingPatch
from linear_solvers import solve_symmetric_indefinite
from mixed_space import MixedSpace, PressurePointData, evaluate_pressure
from quadrature import PointEvaluation, QuadraturePointSet, build_point_set, evaluate_points, refresh_neighbor_pullbacks
from refinement import RefinementPolicy, adapt
from regulation import RegulationSettings, solve_regulation

logger = logging.getLogger(__name__)

FD_CHECK_TOLERANCE = 1e-6
FD_CHECK_COLUMNS = 6
INCOMPRESSIBILITY_TOLERANCE = 1e-8


class VelocityConstraint(Protocol):
    """Source of Dirichlet data for the velocity control variables.

    Implementations return a map from interleaved velocity index ``2 m + a`` to the imposed value for
    the given configuration and time.
    """

    def apply(self, patch: FloatingPatch, time: float) -> dict[int, float]:
        ...


def side_dofs(patch: FloatingPatch, side: BoundarySide) -> np.ndarray:
    """Running indices of the control points on one side of the parametric square."""
    offsets = patch.offsets
    match side:
        case BoundarySide.ETA0:
            return np.arange(offsets[0], offsets[1])
        case BoundarySide.ETA1:
            return np.arange(offsets[-2], offsets[-1])
        case BoundarySide.XI0:
            return offsets[:-1].copy()
        case BoundarySide.XI1:
            return offsets[1:] - 1


def _control_positions(patch: FloatingPatch, dofs: np.ndarray) -> np.ndarray:
    return np.concatenate(patch.control_points)[dofs]


@dataclass
class SideVelocity:
    """Prescribed velocity on one side.

    :ivar side: patch side.
    :ivar value: constant, ``(vx, vy)`` pair, or ``f(positions, time)`` returning ``(K,)`` or ``(K, 2)``.
    :ivar component: 0 or 1 to constrain a single component, None for both.
    """
    side: BoundarySide
    value: float | tuple[float, float] | Callable[[np.ndarray, float], np.ndarray]
    component: int | None = None

    def apply(self, patch: FloatingPatch, time: float) -> dict[int, float]:
        dofs = side_dofs(patch, self.side)
        if callable(self.value):
            values = np.asarray(self.value(_control_positions(patch, dofs), time), dtype=float)
            if values.ndim == 1:
                values = np.column_stack([values, values])
        else:
            values = np.broadcast_to(np.asarray(self.value, dtype=float), (dofs.size, 2))
        components = (0, 1) if self.component is None else (self.component,)
        return {2 * int(m) + a: float(values[k, a]) for a in components for k, m in enumerate(dofs)}


@dataclass
class RotatingWall:
    """Rigid clockwise rotation ``v = omega (y - cy, -(x - cx))`` of the control points on one side.

    With ``time_step`` set the chord velocity of a rotation by ``omega * time_step`` is prescribed
    instead, so that the forward position update keeps the wall points on their circles.
    """
    side: BoundarySide
    angular_velocity: float
    center: tuple[float, float] = (0.0, 0.0)
    time_step: float | None = None

    def apply(self, patch: FloatingPatch, time: float) -> dict[int, float]:
        dofs = side_dofs(patch, self.side)
        rel = _control_positions(patch, dofs) - np.asarray(self.center)
        if self.time_step is None:
            velocity = self.angular_velocity * np.column_stack([rel[:, 1], -rel[:, 0]])
        else:
            angle = self.angular_velocity * self.time_step
            c, s = np.cos(angle), np.sin(angle)
            turned = np.column_stack([c * rel[:, 0] + s * rel[:, 1], -s * rel[:, 0] + c * rel[:, 1]])
            velocity = (turned - rel) / self.time_step
        result = {}
        for m, (vx, vy) in zip(dofs, velocity):
            result[2 * int(m)] = float(vx)
            result[2 * int(m) + 1] = float(vy)
        return result


@dataclass
class SolverSettings:
    """Controls of the time loop and of every step.

    :ivar dt: time step.
    :ivar floating_interval: steps between floating updates (n_f).
    :ivar incompressible: assemble pressure and incompressibility rows.
    :ivar pin_pressure: fix the first pressure control variable to zero.
    :ivar body_force: constant body force density.
    :ivar newton_tolerance: contact Newton tolerance relative to the force scale.
    :ivar newton_max_iterations: contact Newton iteration limit.
    :ivar regulate: re-solve the floating regulation in floating updates.
    :ivar regulation: regulation Newton controls.
    :ivar max_regulation_failures: consecutive failed regulation solves tolerated by keeping the
        previous regulation state.
    :ivar refinement: adaptive refinement thresholds, None to disable.
    :ivar fd_check: verify tangents against finite differences on every step.
    :ivar threads: assembly threads.
    """
    dt: float
    floating_interval: int = 5
    incompressible: bool = True
    pin_pressure: bool = False
    body_force: tuple[float, float] = (0.0, 0.0)
    newton_tolerance: float = 1e-8
    newton_max_iterations: int = 30
    regulate: bool = True
    regulation: RegulationSettings = field(default_factory=RegulationSettings)
    max_regulation_failures: int = 3
    refinement: RefinementPolicy | None = None
    fd_check: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.floating_interval < 1:
            raise ValueError(f"floating_interval must be at least 1, got {self.floating_interval}")


@dataclass
class SystemBlocks:
    """Global matrix (constant within a step without contact) and the known force vectors."""
    matrix: scipy.sparse.csr_matrix
    polymer_force: np.ndarray
    external_force: np.ndarray


@dataclass
class StepResult:
    velocity: np.ndarray
    pressure: np.ndarray
    iterations: int = 1
    contact_points: int = 0
    divergence_residual: float = 0.0


def assemble_system(space: MixedSpace, evaluation: PointEvaluation, pressure_data: PressurePointData | None,
                    state: MaterialState, params: MaterialParams,
                    body_force=(0.0, 0.0)) -> SystemBlocks:
    """Viscous block, gradient/divergence couplings and the polymer / body forces.

    The velocity block is ``eta_s W (delta_ac grad B_m . grad B_j + d_a B_j d_c B_m)``; the pressure
    coupling ``-d_a B_m A_z W`` appears in the momentum rows and, transposed, in the incompressibility
    rows, which leaves the matrix symmetric.
    """
    grads = evaluation.grads
    weights = evaluation.weights
    dofs = evaluation.tuples.dofs
    n_v = space.n_velocity_dofs
    n = space.n_unknowns

    dot = np.einsum('pia,pka->pik', grads, grads)
    local = (dot[:, :, None, :, None] * np.eye(2)[None, None, :, None, :]
             + np.einsum('pic,pka->piakc', grads, grads))
    local *= params.solvent_viscosity * weights[:, None, None, None, None]
    vel = 2 * dofs[:, :, None] + np.arange(2)[None, None, :]
    rows = [np.broadcast_to(vel[:, :, :, None, None], local.shape).ravel()]
    cols = [np.broadcast_to(vel[:, None, None, :, :], local.shape).ravel()]
    data = [local.ravel()]

    if space.pressure is not None:
        coupling = -np.einsum('pia,pz,p->piaz', grads, pressure_data.values, weights)
        p_idx = n_v + pressure_data.dofs
        r = np.broadcast_to(vel[:, :, :, None], coupling.shape).ravel()
        c = np.broadcast_to(p_idx[:, None, None, :], coupling.shape).ravel()
        rows += [r, c]
        cols += [c, r]
        data += [coupling.ravel(), coupling.ravel()]

    matrix = scipy.sparse.coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                                     shape=(n, n)).tocsr()
    polymer = np.zeros((space.patch.n_dofs, 2))
    np.add.at(polymer, dofs, np.einsum('pab,pib,p->pia', state.polymer_stress, grads, weights))
    external = np.zeros((space.patch.n_dofs, 2))
    force = np.asarray(body_force, dtype=float)
    if np.any(force != 0.0):
        np.add.at(external, dofs, np.einsum('pi,a,p->pia', evaluation.tuples.values, force, weights))
    return SystemBlocks(matrix, polymer.ravel(), external.ravel())


def velocity_gradient(evaluation: PointEvaluation, velocity: np.ndarray) -> np.ndarray:
    """``dv_a/dx_b`` at every quadrature point for control velocities ``(M, 2)``."""
    return np.einsum('pia,pib->pab', velocity[evaluation.tuples.dofs], evaluation.grads)


def _pad(vector: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[:vector.size] = vector
    return out


def _pad_matrix(matrix: scipy.sparse.spmatrix, n: int) -> scipy.sparse.csr_matrix:
    coo = matrix.tocoo()
    return scipy.sparse.coo_matrix((coo.data, (coo.row, coo.col)), shape=(n, n)).tocsr()


def _solve_reduced(matrix: scipy.sparse.csr_matrix, rhs: np.ndarray, free: np.ndarray) -> np.ndarray:
    reduced = matrix[free][:, free]
    return solve_symmetric_indefinite(reduced, rhs[free])


def _check_tangent(residual: Callable[[np.ndarray], np.ndarray], tangent: scipy.sparse.csr_matrix,
                   unknowns: np.ndarray, free: np.ndarray) -> None:
    """Compare tangent columns with central differences of the residual."""
    picks = np.unique(free[np.linspace(0, free.size - 1, min(FD_CHECK_COLUMNS, free.size)).astype(int)])
    for k in picks:
        step = 1e-7 * max(1.0, abs(unknowns[k]))
        plus = unknowns.copy()
        minus = unknowns.copy()
        plus[k] += step
        minus[k] -= step
        difference = (residual(plus) - residual(minus)) / (2.0 * step)
        column = tangent[:, k].toarray().ravel()
        scale = max(np.max(np.abs(column)), 1e-300)
        mismatch = np.max(np.abs(difference - column)) / scale
        if mismatch > FD_CHECK_TOLERANCE:
            raise AssemblyMismatch(f"tangent column {k} differs from finite differences by {mismatch:.3e}")


def solve_step(space: MixedSpace, blocks: SystemBlocks, dirichlet: dict[int, float],
               settings: SolverSettings, boundary: BoundaryPointSet | None = None,
               contact: ContactParams | None = None, initial_velocity: np.ndarray | None = None) -> StepResult:
    """Solve for velocities and pressures on the current configuration.

    Dirichlet values are imposed by eliminating rows and columns and moving the known columns to the
    right-hand side. Without contact this is one symmetric indefinite solve; with contact the penalty
    activation is iterated by Newton until the free residual drops below the tolerance.

    :raises LinearSolveFailure: if a factorization breaks down.
    :raises NewtonDivergence: if contact Newton does not converge.
    """
    n = space.n_unknowns
    n_v = space.n_velocity_dofs
    constrained = dict(dirichlet)
    if space.pressure is not None and settings.pin_pressure:
        constrained[n_v] = 0.0
    fixed = np.array(sorted(constrained), dtype=int)
    free = np.setdiff1d(np.arange(n), fixed)
    unknowns = np.zeros(n)
    if initial_velocity is not None:
        unknowns[:n_v] = np.asarray(initial_velocity, dtype=float).ravel()
    unknowns[fixed] = [constrained[k] for k in fixed]
    rhs = _pad(blocks.external_force - blocks.polymer_force, n)
    use_contact = contact is not None and boundary is not None and boundary.n_points > 0

    def residual(u: np.ndarray) -> np.ndarray:
        r = blocks.matrix @ u - rhs
        if use_contact:
            r -= _pad(contact_contributions(boundary, contact, u[:n_v].reshape(-1, 2), n_v).force, n)
        return r

    iterations = 0
    contact_points = 0
    if not use_contact:
        unknowns[free] = 0.0
        unknowns[free] = _solve_reduced(blocks.matrix, rhs - blocks.matrix @ unknowns, free)
        iterations = 1
        if settings.fd_check:
            _check_tangent(residual, blocks.matrix, unknowns, free)
    else:
        for iterations in range(1, settings.newton_max_iterations + 1):
            contribution = contact_contributions(boundary, contact, unknowns[:n_v].reshape(-1, 2), n_v)
            contact_points = contribution.active_points
            internal = blocks.matrix @ unknowns
            r = internal - rhs - _pad(contribution.force, n)
            scale = max(np.max(np.abs(rhs)), np.max(np.abs(internal)), np.max(np.abs(contribution.force)), 1e-300)
            norm = float(np.max(np.abs(r[free]), initial=0.0))
            logger.debug("contact Newton iteration %d: |R| = %.3e (scale %.3e, %d points)",
                         iterations, norm, scale, contact_points)
            tangent = blocks.matrix + _pad_matrix(contribution.tangent, n)
            if settings.fd_check and iterations == 1:
                _check_tangent(residual, tangent, unknowns, free)
            if norm <= settings.newton_tolerance * scale:
                break
            unknowns[free] += _solve_reduced(tangent, -r, free)
        else:
            raise NewtonDivergence(f"contact Newton did not converge in {settings.newton_max_iterations} iterations")

    divergence = 0.0
    if space.pressure is not None:
        rows = (blocks.matrix @ unknowns)[n_v:]
        keep = np.setdiff1d(np.arange(space.n_pressure_dofs), fixed[fixed >= n_v] - n_v)
        divergence = float(np.max(np.abs(rows[keep]), initial=0.0))
    velocity, pressure = space.split(unknowns)
    return StepResult(velocity.copy(), pressure.copy(), iterations, contact_points, divergence)


class Simulation:
    """Time-dependent state of one scenario run.

    :ivar patch: current patch (control points, regulation points, velocity field).
    :type patch: FloatingPatch
    :ivar point_set: Lagrangian quadrature points.
    :type point_set: QuadraturePointSet
    :ivar state: polymer stress history per quadrature point.
    :type state: MaterialState
    :ivar time: current time.
    :type time: float
    :ivar step: number of completed steps.
    :type step: int
    """

    def __init__(self, patch: FloatingPatch, point_set: QuadraturePointSet, params: MaterialParams,
                 settings: SolverSettings, constraints: list[VelocityConstraint],
                 contact: ContactParams | None = None, state: MaterialState | None = None,
                 time: float = 0.0, step: int = 0):
        self.params = params
        self.settings = settings
        self.constraints = list(constraints)
        self.contact = contact
        self.time = time
        self.step = step
        self.state = state or MaterialState.zeros(point_set.n_points)
        self.events: list[dict] = []
        self.regulation_reports: list[dict] = []
        self.regulation_failures = 0
        self.last_result: StepResult | None = None
        self.last_evaluation: PointEvaluation | None = None
        self.last_pressure_data: PressurePointData | None = None
        self.last_solve_time = time
        self.pressure_data: PressurePointData | None = None
        if "velocity" not in patch.field_controls:
            patch = patch.with_field("velocity", [np.zeros((patch.row_count(j), 2)) for j in range(patch.n_rows)])
        self._set_configuration(patch, point_set)

    def _set_configuration(self, patch: FloatingPatch, point_set: QuadraturePointSet) -> None:
        self.patch = patch
        self.point_set = point_set
        self.space = MixedSpace.from_patch(patch, self.settings.incompressible)
        if self.space.pressure is not None:
            self.pressure_data = evaluate_pressure(self.space.pressure, patch, point_set, self.pressure_data)

    @property
    def velocity(self) -> np.ndarray:
        return np.concatenate(self.patch.field_controls["velocity"])

    def dirichlet(self) -> dict[int, float]:
        values = {}
        for constraint in self.constraints:
            values.update(constraint.apply(self.patch, self.time))
        return values

    def solve_current(self) -> StepResult:
        """Solve the mechanics problem on the current configuration without advancing time."""
        evaluation = evaluate_points(self.point_set, self.patch, self.settings.threads)
        if np.any(evaluation.weights <= 0.0):
            raise StabilityAbort(f"non-positive quadrature weight (min {np.min(evaluation.weights):.3e})")
        blocks = assemble_system(self.space, evaluation, self.pressure_data, self.state, self.params,
                                 self.settings.body_force)
        boundary = None
        if self.contact is not None and self.contact.sides:
            boundary = build_boundary_points(self.patch, self.point_set, self.contact.sides, evaluation)
        result = solve_step(self.space, blocks, self.dirichlet(), self.settings, boundary, self.contact,
                            self.velocity)
        if self.space.pressure is not None:
            scale = float(np.max(np.abs(result.velocity), initial=0.0) * np.sum(evaluation.weights))
            if result.divergence_residual > INCOMPRESSIBILITY_TOLERANCE * max(scale, 1e-300):
                logger.warning("incompressibility residual %.3e above %.1e x velocity scale x area",
                               result.divergence_residual, INCOMPRESSIBILITY_TOLERANCE)
        self.last_result = result
        self.last_evaluation = evaluation
        self.last_pressure_data = self.pressure_data
        self.last_solve_time = self.time
        self.patch = self.patch.with_field("velocity", self.patch.split_rows(result.velocity))
        return result

    def step_once(self) -> StepResult:
        result = self.solve_current()
        dt = self.settings.dt
        gradient = velocity_gradient(self.last_evaluation, result.velocity)
        self.state = oldroyd_b_update(self.state.with_velocity_gradient(gradient), dt, self.params)
        moved = self.patch.split_rows(np.concatenate(self.patch.control_points) + dt * result.velocity)
        self.patch = self.patch.with_control_points(moved)
        self.point_set = self.point_set.with_geometry(evaluate_points(self.point_set, self.patch))
        self.step += 1
        self.time += dt
        logger.debug("step %d (t = %.6g): %d Newton iterations, max |Q| = %.3e", self.step, self.time,
                     result.iterations, result.divergence_residual)
        if self.step % self.settings.floating_interval == 0:
            self.floating_update()
        return result

    def floating_update(self) -> None:
        """Regulation, refinement and pullback refresh on the current configuration."""
        patch = self.patch
        point_set = refresh_neighbor_pullbacks(self.point_set, patch)
        if self.settings.regulate:
            patch, point_set = self._regulate(patch, point_set)
        if self.settings.refinement is not None:
            adapted = adapt(patch, point_set, self.settings.refinement, self.step)
            if adapted.events:
                patch = adapted.patch
                point_set = refresh_neighbor_pullbacks(point_set, patch)
                self.events.extend(event.to_dict() for event in adapted.events)
        point_set = point_set.with_geometry(evaluate_points(point_set, patch, self.settings.threads))
        self._set_configuration(patch, point_set)

    def _regulate(self, patch: FloatingPatch, point_set: QuadraturePointSet) -> tuple[FloatingPatch, QuadraturePointSet]:
        """Regulation solve; a failure keeps the previous regulation until too many occur in a row."""
        try:
            regulated = solve_regulation(patch, point_set, self.settings.regulation)
        except RegulationFailure as error:
            self.regulation_failures += 1
            if self.regulation_failures > self.settings.max_regulation_failures:
                raise
            logger.warning("step %d: keeping previous regulation (%s)", self.step, error)
            self.regulation_reports.append({"step": self.step, "converged": False, "reason": str(error)})
            self.events.append({"step": self.step, "action": "regulation_skipped"})
            return patch, point_set
        self.regulation_failures = 0
        record = regulated.report.to_dict()
        record["step"] = self.step
        self.regulation_reports.append(record)
        return regulated.patch, regulated.point_set

    def advance(self, n_steps: int, callback: Callable[["Simulation", StepResult], None] | None = None) -> None:
        """Run ``n_steps`` steps; module errors are re-raised with the failing step attached."""
        for _ in range(n_steps):
            try:
                result = self.step_once()
            except FligaError as error:
                raise type(error)(str(error), step=self.step + 1) from error
            if callback is not None:
                callback(self, result)

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "step": self.step,
            "patch": self.patch.to_dict(),
            "material_state": self.state.to_dict(),
            "point_set": {"points_per_span": self.point_set.points_per_span,
                          "density_factors": self.point_set.density_factors.tolist(),
                          "initial_spans": self.point_set.initial_spans.tolist()},
            "pressure": [] if self.last_result is None else self.last_result.pressure.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, params: MaterialParams, settings: SolverSettings,
                  constraints: list[VelocityConstraint], contact: ContactParams | None = None) -> "Simulation":
        patch = FloatingPatch.from_dict(data["patch"])
        point_set = restore_point_set(patch, data["point_set"])
        state = MaterialState.from_dict(data["material_state"])
        return cls(patch, point_set, params, settings, constraints, contact, state, data["time"], data["step"])


def restore_point_set(patch: FloatingPatch, layout: dict) -> QuadraturePointSet:
    """Rebuild a point set from its construction parameters; parent data depend on nothing else."""
    return build_point_set(patch, layout["points_per_span"], layout["density_factors"], layout["initial_spans"])


def advance_time(simulation: Simulation, n_steps: int) -> Simulation:
    simulation.advance(n_steps)
    return simulation
