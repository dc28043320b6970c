"""Material laws: Newtonian solvent plus an optional Oldroyd-B polymer contribution.

The polymer stress is integrated explicitly point by point, so the mechanics system only ever sees
it as a known load.
"""
from dataclasses import dataclass, replace
from enum import Enum
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import numpy as np


class MaterialModel(Enum):
    """Constitutive model of the fluid.

    :cvar NEWTONIAN: purely viscous solvent, no polymer stress.
    :cvar OLDROYD_B: solvent plus upper-convected Maxwell polymer stress.
    """
    NEWTONIAN = 'newtonian'
    OLDROYD_B = 'oldroyd_b'


@dataclass
class MaterialParams:
    """Viscosities and relaxation time.

    :ivar solvent_viscosity: eta_s.
    :type solvent_viscosity: float
    :ivar polymer_viscosity: eta_p.
    :type polymer_viscosity: float
    :ivar relaxation_time: lambda.
    :type relaxation_time: float
    :ivar model: constitutive model.
    :type model: MaterialModel
    """
    solvent_viscosity: float
    polymer_viscosity: float = 0.0
    relaxation_time: float = 0.0
    model: MaterialModel = MaterialModel.NEWTONIAN

    def __post_init__(self):
        if isinstance(self.model, str):
            self.model = MaterialModel(self.model)
        if self.solvent_viscosity < 0.0:
            raise ValueError(f"solvent_viscosity must be non-negative, got {self.solvent_viscosity}")
        if self.model is MaterialModel.OLDROYD_B:
            if self.relaxation_time <= 0.0:
                raise ValueError(f"Oldroyd-B needs a positive relaxation_time, got {self.relaxation_time}")
            if self.polymer_viscosity < 0.0:
                raise ValueError(f"polymer_viscosity must be non-negative, got {self.polymer_viscosity}")

    @property
    def viscosity_ratio(self) -> float:
        """Solvent viscosity ratio ``eta_s / (eta_s + eta_p)``."""
        return self.solvent_viscosity / (self.solvent_viscosity + self.polymer_viscosity)

    @classmethod
    def from_weissenberg(cls, weissenberg: float, solvent_viscosity: float, polymer_viscosity: float,
                         exit_radius: float, inflow_speed: float) -> Self:
        """Oldroyd-B parameters whose relaxation time matches ``Wi`` for the shear-rate estimate ``12 v_in / r_out``.

        ``Wi = 0`` yields a Newtonian fluid with the total viscosity.
        """
        if weissenberg == 0.0:
            return cls(solvent_viscosity + polymer_viscosity)
        return cls(solvent_viscosity, polymer_viscosity, weissenberg * exit_radius / (12.0 * inflow_speed),
                   MaterialModel.OLDROYD_B)

    def to_dict(self) -> dict:
        return {"solvent_viscosity": self.solvent_viscosity, "polymer_viscosity": self.polymer_viscosity,
                "relaxation_time": self.relaxation_time, "model": self.model.value}


@dataclass(frozen=True, eq=False)
class MaterialState:
    """Per-point history.

    :ivar polymer_stress: polymer extra stress ``(P, 2, 2)``.
    :ivar prev_velocity_gradient: ``dv_a/dx_b`` from the last solved step ``(P, 2, 2)``.
    """
    polymer_stress: np.ndarray
    prev_velocity_gradient: np.ndarray

    @classmethod
    def zeros(cls, n_points: int) -> Self:
        return cls(np.zeros((n_points, 2, 2)), np.zeros((n_points, 2, 2)))

    def with_velocity_gradient(self, gradient: np.ndarray) -> Self:
        return replace(self, prev_velocity_gradient=np.array(gradient, dtype=float))

    def to_dict(self) -> dict:
        return {"polymer_stress": self.polymer_stress.tolist(),
                "prev_velocity_gradient": self.prev_velocity_gradient.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        return cls(np.asarray(data["polymer_stress"], dtype=float).reshape(-1, 2, 2),
                   np.asarray(data["prev_velocity_gradient"], dtype=float).reshape(-1, 2, 2))


def oldroyd_b_update(state: MaterialState, dt: float, params: MaterialParams) -> MaterialState:
    """Forward-Euler step of the upper-convected polymer stress.

    ``tau_new = tau + dt (L tau + tau L^T - (tau - eta_p (L + L^T)) / lambda)`` with ``L`` the stored
    velocity gradient, symmetrized afterwards. Newtonian fluids keep a zero polymer stress.
    """
    if params.model is MaterialModel.NEWTONIAN:
        return replace(state, polymer_stress=np.zeros_like(state.polymer_stress))
    tau = state.polymer_stress
    grad = state.prev_velocity_gradient
    grad_t = np.swapaxes(grad, 1, 2)
    rate = (grad @ tau + tau @ grad_t
            - (tau - params.polymer_viscosity * (grad + grad_t)) / params.relaxation_time)
    updated = tau + dt * rate
    return replace(state, polymer_stress=0.5 * (updated + np.swapaxes(updated, 1, 2)))


def cauchy_stress(pressure, velocity_gradient, polymer_stress, params: MaterialParams) -> np.ndarray:
    """``sigma = -p I + eta_s (L + L^T) + tau_p`` for one point or a batch."""
    grad = np.asarray(velocity_gradient, dtype=float)
    p = np.asarray(pressure, dtype=float)
    identity = np.broadcast_to(np.eye(2), grad.shape)
    return (-p[..., None, None] * identity + params.solvent_viscosity * (grad + np.swapaxes(grad, -1, -2))
            + np.asarray(polymer_stress, dtype=float))
