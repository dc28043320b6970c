"""Logarithmic L2 error norms and the per-step error report."""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from errors import ZeroReference
from mixed_space import PressurePointData
from quadrature import PointEvaluation

logger = logging.getLogger(__name__)

L2_FLOOR = -16.0
ZERO_REFERENCE = 1e-30
REPORT_COLUMNS = ("step", "time", "L2_vx", "L2_vy", "L2_p", "dofs", "wall_ms")


def l2_log_error(numeric, analytic, weights) -> float:
    """``log10(sqrt(int (v - v_h)^2) / sqrt(int v^2))`` by quadrature, floored at ``L2_FLOOR``.

    :param numeric: discrete values at the quadrature points.
    :param analytic: reference values at the same points.
    :param weights: physical quadrature weights.
    :return: logarithmic relative error.
    :rtype: float
    :raises ZeroReference: if the reference field has (numerically) zero norm.
    """
    numeric = np.asarray(numeric, dtype=float)
    analytic = np.asarray(analytic, dtype=float)
    weights = np.asarray(weights, dtype=float)
    reference = float(np.sum(weights * analytic ** 2))
    if reference < ZERO_REFERENCE:
        raise ZeroReference(f"reference field has zero L2 norm ({reference:.3e})")
    error = float(np.sum(weights * (numeric - analytic) ** 2))
    if error <= 0.0:
        return L2_FLOOR
    return max(L2_FLOOR, 0.5 * math.log10(error / reference))


def remove_offset(numeric, analytic, weights) -> np.ndarray:
    """Shift ``numeric`` by the constant that minimizes its L2 distance to ``analytic``."""
    numeric = np.asarray(numeric, dtype=float)
    weights = np.asarray(weights, dtype=float)
    return numeric + np.sum(weights * (np.asarray(analytic) - numeric)) / np.sum(weights)


def velocity_at_points(evaluation: PointEvaluation, velocity: np.ndarray) -> np.ndarray:
    return np.einsum('pt,pta->pa', evaluation.tuples.values, velocity[evaluation.tuples.dofs])


@dataclass
class ErrorRecord:
    step: int
    time: float
    L2_vx: float
    L2_vy: float
    L2_p: float
    dofs: int
    wall_ms: float = 0.0


def field_errors(evaluation: PointEvaluation, velocity: np.ndarray,
                 analytic_velocity: Callable[[np.ndarray], np.ndarray],
                 pressure_data: PressurePointData | None = None, pressure: np.ndarray | None = None,
                 analytic_pressure: Callable[[np.ndarray], np.ndarray] | None = None) -> tuple[float, float, float]:
    """Velocity component errors and the offset-free pressure error (nan without a pressure reference)."""
    numeric = velocity_at_points(evaluation, velocity)
    exact = analytic_velocity(evaluation.positions)
    weights = evaluation.weights
    l2_vx = l2_log_error(numeric[:, 0], exact[:, 0], weights)
    l2_vy = l2_log_error(numeric[:, 1], exact[:, 1], weights)
    l2_p = float('nan')
    if analytic_pressure is not None and pressure_data is not None and pressure is not None:
        exact_p = analytic_pressure(evaluation.positions)
        if np.sum(weights * exact_p ** 2) >= ZERO_REFERENCE:
            shifted = remove_offset(pressure_data.field(pressure), exact_p, weights)
            l2_p = l2_log_error(shifted, exact_p, weights)
    return l2_vx, l2_vy, l2_p


@dataclass
class ErrorReport:
    """Error time series of one run plus scenario-specific summary values.

    :ivar records: one record per reported step.
    :type records: list[ErrorRecord]
    :ivar summary: scalar results such as the swell ratio or the mass balance.
    :type summary: dict
    :ivar events: refinement and regulation log.
    :type events: list[dict]
    """
    records: list[ErrorRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)

    def append(self, record: ErrorRecord) -> None:
        logger.debug("step %d: L2 vx %.3f vy %.3f p %.3f", record.step, record.L2_vx, record.L2_vy, record.L2_p)
        self.records.append(record)

    @property
    def last(self) -> ErrorRecord | None:
        return self.records[-1] if self.records else None

    def rows(self) -> list[dict]:
        return [asdict(record) for record in self.records]

    def n_events(self, action: str) -> int:
        return sum(event.get("action") == action for event in self.events)
