"""Closed-form reference fields for the verification scenarios."""
from dataclasses import dataclass

import numpy as np


def patch_test_velocity(positions: np.ndarray) -> np.ndarray:
    """Uniform volumetric expansion ``v = (x, y)``."""
    return np.array(positions, dtype=float)


def patch_test_gradient(positions: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.eye(2), (len(positions), 2, 2)).copy()


@dataclass
class CouetteFlow:
    """Steady flow between a fixed inner and a clockwise rotating outer cylinder.

    :ivar inner_radius: R_I.
    :ivar outer_radius: R_O.
    :ivar angular_velocity: Omega_O of the outer cylinder.
    :ivar relaxation_time: lambda, enters the polymer pressure only.
    :ivar center: axis position.
    """
    inner_radius: float
    outer_radius: float
    angular_velocity: float
    relaxation_time: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)

    @property
    def alpha(self) -> float:
        ro2 = self.outer_radius ** 2
        return self.angular_velocity * ro2 / (ro2 - self.inner_radius ** 2)

    @property
    def beta(self) -> float:
        return -self.alpha * self.inner_radius ** 2

    def _polar(self, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rel = np.atleast_2d(positions) - np.asarray(self.center)
        return np.hypot(rel[:, 0], rel[:, 1]), np.arctan2(rel[:, 1], rel[:, 0])

    def velocity(self, positions: np.ndarray) -> np.ndarray:
        r, phi = self._polar(positions)
        speed = self.alpha * r + self.beta / r
        return np.column_stack([np.sin(phi) * speed, -np.cos(phi) * speed])

    def pressure(self, positions: np.ndarray) -> np.ndarray:
        """Oldroyd-B pressure, zero at the outer cylinder; identically zero for Newtonian fluids."""
        r, _ = self._polar(positions)
        return (2.0 * np.pi * self.beta ** 2 * self.relaxation_time
                * (1.0 / r ** 4 - 1.0 / self.outer_radius ** 4))
