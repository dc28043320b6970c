"""Benchmark scenarios: setup, time loop, measurements and summaries.

Each scenario kind has a runner that builds the initial :class:`solver.Simulation` from a
:class:`scenario_config.ScenarioConfig`, measures errors after every reported step and condenses the
run into summary values. :func:`run_scenario` drives any runner.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from analytic_solutions import CouetteFlow, patch_test_velocity
from constitutive import MaterialModel, MaterialParams
from contact import BoundarySide, ContactParams, SlipRamp
from error_metrics import ErrorRecord, ErrorReport, field_errors
from floating_basis import FloatingPatch, row_curve
from geometry_templates import (NozzlePath, SubstrateConstraint, annulus_patch, deposition_patch,
                                downward_nozzle_walls, extrusion_patch, extrusion_walls, make_substrate,
                                rectangle_patch, warp_regulation)
from output_writers import write_point_cloud
from quadrature import PointEvaluation, QuadraturePointSet, build_point_set
from refinement import RefinementPolicy, row_segment_lengths
from regulation import RegulationSettings
from scenario_config import ScenarioConfig, ScenarioKind
from solver import RotatingWall, SideVelocity, Simulation, SolverSettings, VelocityConstraint

logger = logging.getLogger(__name__)

NAN_ERRORS = (float('nan'), float('nan'), float('nan'))


def mean_span_length(patch: FloatingPatch, point_set: QuadraturePointSet) -> float:
    lengths = np.concatenate([row_segment_lengths(j, patch, point_set) for j in range(patch.n_rows)])
    return float(np.mean(lengths))


def refinement_policy(config: ScenarioConfig, patch: FloatingPatch,
                      point_set: QuadraturePointSet) -> RefinementPolicy | None:
    section = config.refinement
    if not section.enabled:
        return None
    if section.insert_threshold is not None and section.remove_threshold is not None:
        return RefinementPolicy(section.insert_threshold, section.remove_threshold,
                                config.discretization.density_factors)
    return RefinementPolicy.from_mean_span(mean_span_length(patch, point_set), section.insert_factor,
                                           section.remove_factor, config.discretization.density_factors)


def solver_settings(config: ScenarioConfig, refinement: RefinementPolicy | None, pin_pressure: bool = False,
                    fd_check: bool = False, threads: int = 1) -> SolverSettings:
    regulation = config.regulation
    return SolverSettings(
        dt=config.stepping.dt,
        floating_interval=config.stepping.floating_interval,
        incompressible=config.incompressible,
        pin_pressure=pin_pressure,
        body_force=tuple(config.body_force),
        regulate=regulation.enabled,
        regulation=RegulationSettings(tolerance=regulation.tolerance, max_iterations=regulation.max_iterations,
                                      max_halvings=regulation.max_halvings, threads=threads),
        max_regulation_failures=regulation.max_failures,
        refinement=refinement,
        fd_check=fd_check,
        threads=threads,
    )


def _point_set(config: ScenarioConfig, patch: FloatingPatch) -> QuadraturePointSet:
    section = config.discretization
    return build_point_set(patch, section.points_per_span, section.density_factors)


def _simulation(config: ScenarioConfig, patch: FloatingPatch, material: MaterialParams,
                constraints: list[VelocityConstraint], contact: ContactParams | None, pin_pressure: bool,
                fd_check: bool, threads: int) -> Simulation:
    point_set = _point_set(config, patch)
    policy = refinement_policy(config, patch, point_set)
    settings = solver_settings(config, policy, pin_pressure, fd_check, threads)
    return Simulation(patch, point_set, material, settings, constraints, contact)


def _contact(config: ScenarioConfig, walls, sides, ramp_axis: int = 0) -> ContactParams:
    section = config.contact
    ramp = None if section.slip_ramp is None else SlipRamp(ramp_axis, *section.slip_ramp)
    return ContactParams(section.penetration_penalty, section.rate_penalty, section.slip_penalty,
                         list(walls), list(sides), ramp)


def _weissenberg_material(config: ScenarioConfig, weissenberg: float | None, exit_radius: float,
                          inflow_speed: float) -> MaterialParams:
    if weissenberg is None:
        return config.material
    material = MaterialParams.from_weissenberg(weissenberg, config.material.solvent_viscosity,
                                               config.material.polymer_viscosity, exit_radius, inflow_speed)
    logger.info("Wi = %g gives relaxation time %.6g s", weissenberg, material.relaxation_time)
    return material


class ScenarioRunner(Protocol):
    """Setup and post-processing of one scenario kind.

    :ivar config: parsed scenario document.
    :type config: ScenarioConfig
    :ivar static: True when the scenario is a single solve on the initial configuration.
    :type static: bool
    """
    config: ScenarioConfig
    static: bool

    def build(self, fd_check: bool = False, threads: int = 1) -> Simulation:
        ...

    def measure(self, simulation: Simulation) -> tuple[float, float, float]:
        """``(L2_vx, L2_vy, L2_p)`` of the last solve, nan where no reference exists."""
        ...

    def summarize(self, simulation: Simulation, report: ErrorReport) -> dict:
        ...


class PatchTestRunner:
    """Volumetric expansion ``v = (x, y)`` of a rectangle with warped regulation.

    Only normal velocity components are prescribed on each side; pressure and incompressibility are
    switched off.
    """
    static = True

    def __init__(self, config: ScenarioConfig):
        self.config = config

    def build(self, fd_check: bool = False, threads: int = 1) -> Simulation:
        geometry = self.config.geometry
        section = self.config.discretization
        patch = rectangle_patch(geometry.width, geometry.height, section.n_spans, section.n_rows, section.degree)
        patch = warp_regulation(patch, geometry.warp)
        constraints = [
            SideVelocity(BoundarySide.XI0, lambda x, t: x[:, 0], component=0),
            SideVelocity(BoundarySide.XI1, lambda x, t: x[:, 0], component=0),
            SideVelocity(BoundarySide.ETA0, lambda x, t: x[:, 1], component=1),
            SideVelocity(BoundarySide.ETA1, lambda x, t: x[:, 1], component=1),
        ]
        return _simulation(self.config, patch, self.config.material, constraints, None, False, fd_check, threads)

    def measure(self, simulation: Simulation) -> tuple[float, float, float]:
        return field_errors(simulation.last_evaluation, simulation.last_result.velocity, patch_test_velocity)

    def summarize(self, simulation: Simulation, report: ErrorReport) -> dict:
        record = report.last
        return {"L2_vx": record.L2_vx, "L2_vy": record.L2_vy}


class TaylorCouetteRunner:
    """Annulus between a fixed inner and a rotating outer cylinder; pressure is pinned."""
    static = False

    def __init__(self, config: ScenarioConfig):
        self.config = config
        geometry = config.geometry
        relaxation = config.material.relaxation_time if config.material.model is MaterialModel.OLDROYD_B else 0.0
        self.flow = CouetteFlow(geometry.inner_radius, geometry.outer_radius, geometry.angular_velocity, relaxation)
        self._turns = 0

    def build(self, fd_check: bool = False, threads: int = 1) -> Simulation:
        geometry = self.config.geometry
        section = self.config.discretization
        patch = annulus_patch(geometry.inner_radius, geometry.outer_radius, section.n_spans, section.n_rows,
                              section.degree)
        constraints = [SideVelocity(BoundarySide.ETA0, (0.0, 0.0)),
                       RotatingWall(BoundarySide.ETA1, geometry.angular_velocity,
                                    time_step=self.config.stepping.dt)]
        return _simulation(self.config, patch, self.config.material, constraints, None, True, fd_check, threads)

    def turns(self, simulation: Simulation) -> float:
        return simulation.last_solve_time * self.config.geometry.angular_velocity / (2.0 * math.pi)

    def measure(self, simulation: Simulation) -> tuple[float, float, float]:
        pressure = self.flow.pressure if self.flow.relaxation_time > 0.0 else None
        errors = field_errors(simulation.last_evaluation, simulation.last_result.velocity, self.flow.velocity,
                              simulation.last_pressure_data, simulation.last_result.pressure, pressure)
        turns = int(self.turns(simulation))
        if turns > self._turns:
            self._turns = turns
            logger.info("turn %d: L2 vx %.3f, vy %.3f, p %.3f", turns, *errors)
        return errors

    def summarize(self, simulation: Simulation, report: ErrorReport) -> dict:
        record = report.last
        summary = {"alpha": self.flow.alpha, "beta": self.flow.beta, "turns": self.turns(simulation)}
        if record is not None:
            summary.update(L2_vx=record.L2_vx, L2_vy=record.L2_vy, L2_p=record.L2_p)
        return summary


def swell_ratio(patch: FloatingPatch, exit_position: float, exit_radius: float, window, samples: int = 400,
                axis: int = 0) -> float:
    """Mean extrudate half-width between ``window`` distances behind the exit, over ``r_out``."""
    top = patch.n_rows - 1
    curve = row_curve(top, np.linspace(0.0, 1.0, samples), patch)
    distance = curve[:, axis] - exit_position
    inside = (distance >= window[0]) & (distance <= window[1])
    if not np.any(inside):
        logger.warning("no extrudate samples between %g and %g behind the exit", *window)
        return float('nan')
    return float(np.mean(np.abs(curve[inside, 1 - axis])) / exit_radius)


def boundary_polygon(patch: FloatingPatch, samples: int = 400) -> np.ndarray:
    """Closed outline of an open patch: row 0, the row ends, the last row backwards, the row starts."""
    if patch.periodic:
        raise ValueError("periodic patches have no single outline")
    xt = np.linspace(0.0, 1.0, samples)
    top = patch.n_rows - 1
    ends = [row_curve(j, 1.0, patch) for j in range(1, top)]
    starts = [row_curve(j, 0.0, patch) for j in range(top - 1, 0, -1)]
    return np.concatenate([row_curve(0, xt, patch), *ends, row_curve(top, xt, patch)[::-1], *starts])


def _clip_half_plane(polygon: np.ndarray, axis: int, level: float, sign: float) -> np.ndarray:
    distance = sign * (polygon[:, axis] - level)
    kept = []
    for i in range(len(polygon)):
        k = (i + 1) % len(polygon)
        if distance[i] >= 0.0:
            kept.append(polygon[i])
        if (distance[i] >= 0.0) != (distance[k] >= 0.0):
            t = distance[i] / (distance[i] - distance[k])
            kept.append(polygon[i] + t * (polygon[k] - polygon[i]))
    return np.array(kept).reshape(-1, 2)


def polygon_area(polygon: np.ndarray) -> float:
    x, y = polygon[:, 0], polygon[:, 1]
    return 0.5 * abs(float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)))


def area_beyond(patch: FloatingPatch, axis: int, level: float, sign: float = 1.0, samples: int = 400) -> float:
    """Area of the patch with ``sign * (x_axis - level) > 0``, clipped from the sampled outline."""
    return polygon_area(_clip_half_plane(boundary_polygon(patch, samples), axis, level, sign))


def inflow_width(patch: FloatingPatch, axis: int) -> float:
    """Extent of the ``XI0`` side along ``axis``; the side is straight between the row starts."""
    starts = np.array([patch.control_points[j][0] for j in range(patch.n_rows)])
    return float(np.ptp(starts[:, axis]))


def mass_balance(times, areas, inflow_rate: float, window: float = 0.5) -> float:
    """Growth rate of an area over ``inflow_rate``, fitted to the last ``window`` share of the samples.

    The start-up transient, during which the penalty walls take up material, is left out of the fit.
    """
    times = np.asarray(times, dtype=float)
    areas = np.asarray(areas, dtype=float)
    first = int(np.floor((1.0 - window) * times.size))
    if inflow_rate <= 0.0 or times.size - first < 2:
        return float('nan')
    slope = np.polyfit(times[first:], areas[first:], 1)[0]
    return float(slope / inflow_rate)


def cumulative_mass_balance(deposited: float, inflow_rate: float, elapsed: float) -> float:
    """Deposited area over the area delivered by the inflow; nan before any inflow."""
    delivered = inflow_rate * elapsed
    return deposited / delivered if delivered > 0.0 else float('nan')


class ExtrudedAreaLog:
    """Area beyond a level and the inflow width, sampled at every reported step."""

    def __init__(self, axis: int, level: float, sign: float, inflow_axis: int):
        self.axis = axis
        self.level = level
        self.sign = sign
        self.inflow_axis = inflow_axis
        self.times: list[float] = []
        self.areas: list[float] = []
        self.widths: list[float] = []

    def sample(self, simulation: Simulation) -> None:
        self.times.append(simulation.last_solve_time)
        self.areas.append(area_beyond(simulation.patch, self.axis, self.level, self.sign))
        self.widths.append(inflow_width(simulation.patch, self.inflow_axis))

    def mass_balance(self, inflow_speed: float) -> float:
        late = self.widths[len(self.widths) // 2:]
        if not late:
            return float('nan')
        return mass_balance(self.times, self.areas, inflow_speed * float(np.mean(late)))


class PlanarExtrusionRunner:
    """Half nozzle: piston inflow on the first column, symmetry on row 0, contact on the last row."""
    static = False

    def __init__(self, config: ScenarioConfig):
        self.config = config
        geometry = config.geometry
        self.nozzle = geometry.nozzle
        self.material = _weissenberg_material(config, geometry.weissenberg, self.nozzle.exit_radius,
                                              geometry.inflow_speed)
        self.extruded = ExtrudedAreaLog(0, self.nozzle.exit_position, 1.0, 1)

    def build(self, fd_check: bool = False, threads: int = 1) -> Simulation:
        geometry = self.config.geometry
        section = self.config.discretization
        patch = extrusion_patch(self.nozzle, section.n_spans, section.n_rows, section.degree)
        constraints = [SideVelocity(BoundarySide.XI0, (geometry.inflow_speed, 0.0)),
                       SideVelocity(BoundarySide.ETA0, 0.0, component=1)]
        contact = _contact(self.config, [extrusion_walls(self.nozzle)], [BoundarySide.ETA1], ramp_axis=0)
        return _simulation(self.config, patch, self.material, constraints, contact, False, fd_check, threads)

    def measure(self, simulation: Simulation) -> tuple[float, float, float]:
        self.extruded.sample(simulation)
        return NAN_ERRORS

    def summarize(self, simulation: Simulation, report: ErrorReport) -> dict:
        geometry = self.config.geometry
        swell = swell_ratio(simulation.patch, self.nozzle.exit_position, self.nozzle.exit_radius,
                            geometry.swell_window)
        summary = {"weissenberg": geometry.weissenberg, "relaxation_time": self.material.relaxation_time,
                   "viscosity_ratio": self.material.viscosity_ratio, "swell_ratio": swell}
        if simulation.last_evaluation is not None:
            extruded = area_beyond(simulation.patch, 0, self.nozzle.exit_position)
            summary["mass_balance"] = self.extruded.mass_balance(geometry.inflow_speed)
            summary["cumulative_mass_balance"] = cumulative_mass_balance(
                extruded, geometry.inflow_speed * self.nozzle.reservoir_radius, simulation.last_solve_time)
        logger.info("swell ratio S = %.4f", swell)
        return summary


def strand_alignment_angle(evaluation: PointEvaluation, direction, mask: np.ndarray) -> float:
    """Largest angle (degrees) between row tangents and the path direction over the masked points."""
    if not np.any(mask):
        return float('nan')
    tangent = evaluation.jacobians[mask][:, :, 0]
    unit = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    cosine = np.abs(tangent @ unit) / np.linalg.norm(tangent, axis=1)
    return float(np.degrees(np.arccos(np.clip(np.min(cosine), 0.0, 1.0))))


class AmDepositionRunner:
    """Downward nozzle over a substrate that moves against the nozzle path."""
    static = False

    def __init__(self, config: ScenarioConfig):
        self.config = config
        geometry = config.geometry
        self.nozzle = geometry.nozzle
        self.material = _weissenberg_material(config, geometry.weissenberg, self.nozzle.exit_radius,
                                              geometry.inflow_speed)
        substrate = dict(geometry.substrate)
        self.substrate = make_substrate(substrate.pop("kind", "planar"), **substrate)
        path = dict(geometry.path)
        path["waypoints"] = [tuple(w) for w in path.get("waypoints", [(0.0, 0.0, 0.0)])]
        self.path = NozzlePath(**path)
        self.deposited = ExtrudedAreaLog(1, 0.0, -1.0, 0)

    def build(self, fd_check: bool = False, threads: int = 1) -> Simulation:
        geometry = self.config.geometry
        section = self.config.discretization
        patch = deposition_patch(self.nozzle, geometry.standoff, section.n_spans, section.n_rows, section.degree)
        constraints = [SideVelocity(BoundarySide.XI0, (0.0, -geometry.inflow_speed)),
                       SubstrateConstraint(self.substrate, self.path)]
        left, right = downward_nozzle_walls(self.nozzle)
        contact = _contact(self.config, [left, right], [BoundarySide.ETA0, BoundarySide.ETA1], ramp_axis=1)
        return _simulation(self.config, patch, self.material, constraints, contact, False, fd_check, threads)

    def measure(self, simulation: Simulation) -> tuple[float, float, float]:
        self.deposited.sample(simulation)
        return NAN_ERRORS

    def summarize(self, simulation: Simulation, report: ErrorReport) -> dict:
        geometry = self.config.geometry
        summary = {"nozzle_position": self.path.position(simulation.time).tolist()}
        evaluation = simulation.last_evaluation
        if evaluation is None:
            return summary
        initial = geometry.standoff * 2.0 * self.nozzle.exit_radius
        deposited = area_beyond(simulation.patch, 1, 0.0, sign=-1.0) - initial
        summary["mass_balance"] = self.deposited.mass_balance(geometry.inflow_speed)
        summary["cumulative_mass_balance"] = cumulative_mass_balance(
            deposited, geometry.inflow_speed * 2.0 * self.nozzle.reservoir_radius, simulation.last_solve_time)
        waypoints = np.asarray(self.path.waypoints, dtype=float)
        direction = waypoints[-1, 1:] - waypoints[0, 1:]
        if np.linalg.norm(direction) > 0.0:
            behind = -np.sign(direction[0]) * evaluation.positions[:, 0] > 2.0 * self.nozzle.exit_radius
            strand = behind & (evaluation.positions[:, 1] < -0.5 * geometry.standoff)
            angle = strand_alignment_angle(evaluation, direction, strand)
            summary["max_interface_angle"] = angle
            summary["aligned"] = bool(angle <= geometry.max_interface_angle) if not math.isnan(angle) else None
        return summary


def get_runner(config: ScenarioConfig) -> ScenarioRunner:
    """Runner for the scenario kind of ``config``."""
    match config.kind:
        case ScenarioKind.PATCH_TEST:
            return PatchTestRunner(config)
        case ScenarioKind.TAYLOR_COUETTE:
            return TaylorCouetteRunner(config)
        case ScenarioKind.PLANAR_EXTRUSION:
            return PlanarExtrusionRunner(config)
        case ScenarioKind.AM_DEPOSITION:
            return AmDepositionRunner(config)
        case _:
            raise ValueError(f"Unknown scenario kind: {config.kind}")


@dataclass
class ScenarioRun:
    simulation: Simulation
    report: ErrorReport
    snapshots: list[Path] = field(default_factory=list)


def _record(runner: ScenarioRunner, simulation: Simulation, report: ErrorReport, wall_ms: float) -> None:
    result = simulation.last_result
    dofs = result.velocity.size + result.pressure.size
    report.append(ErrorRecord(simulation.step, simulation.last_solve_time, *runner.measure(simulation), dofs, wall_ms))


def run_scenario(config: ScenarioConfig, fd_check: bool = False, threads: int = 1,
                 snapshot_dir: str | Path | None = None) -> ScenarioRun:
    """Build and run a scenario.

    Static scenarios solve once on the initial configuration; all others advance ``stepping.n_steps``
    steps and record errors every ``stepping.report_interval`` steps.

    :param config: validated scenario document.
    :type config: ScenarioConfig
    :param fd_check: verify mechanics tangents against finite differences on every solve.
    :type fd_check: bool
    :param threads: assembly threads.
    :type threads: int
    :param snapshot_dir: directory for point-cloud snapshots every ``output.snapshot_interval`` steps.
    :return: final simulation state and the error report.
    :rtype: ScenarioRun
    """
    runner = get_runner(config)
    simulation = runner.build(fd_check, threads)
    report = ErrorReport()
    run = ScenarioRun(simulation, report)
    timing = config.output.record_timing
    logger.info("starting %s '%s': %d unknowns, %d quadrature points", config.kind.value, config.name,
                simulation.space.n_unknowns, simulation.point_set.n_points)

    if runner.static:
        start = time.perf_counter()
        simulation.solve_current()
        _record(runner, simulation, report, 1e3 * (time.perf_counter() - start) if timing else 0.0)
    else:
        interval = config.output.snapshot_interval
        for _ in range(config.stepping.n_steps):
            start = time.perf_counter()
            simulation.advance(1)
            wall_ms = 1e3 * (time.perf_counter() - start) if timing else 0.0
            if simulation.step % config.stepping.report_interval == 0 or simulation.step == config.stepping.n_steps:
                _record(runner, simulation, report, wall_ms)
            if snapshot_dir is not None and interval > 0 and simulation.step % interval == 0:
                path = Path(snapshot_dir) / f"{config.name}_points_{simulation.step:06d}.txt"
                run.snapshots.append(write_point_cloud(simulation, path))

    report.events = list(simulation.events)
    report.summary = runner.summarize(simulation, report)
    logger.info("finished %s '%s' after %d steps (t = %.6g)", config.kind.value, config.name, simulation.step,
                simulation.time)
    return run


def run_patch_test(config: ScenarioConfig, **options) -> ErrorReport:
    return run_scenario(config, **options).report


def run_taylor_couette(config: ScenarioConfig, **options) -> ErrorReport:
    return run_scenario(config, **options).report


def run_planar_extrusion(config: ScenarioConfig, **options) -> ErrorReport:
    return run_scenario(config, **options).report


def run_am_deposition(config: ScenarioConfig, **options) -> ErrorReport:
    return run_scenario(config, **options).report
