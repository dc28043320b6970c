"""Exception hierarchy shared by every layer of the engine.

Each exception carries the CLI exit code and a short machine-readable category so
the driver can report failures without inspecting the message text.
"""


class FligaError(Exception):
    """Base class of all engine failures.

    :cvar exit_code: Process exit status used by the command-line driver.
    :cvar category: Machine-readable failure category.
    :ivar step: Time-step index at which the failure surfaced, if known.
    :type step: int | None
    """
    exit_code: int = 3
    category: str = "solver"

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step

    def to_record(self) -> dict:
        """Machine-readable summary of the failure.

        :return: dictionary with the category, the message and the step index.
        :rtype: dict
        """
        return {"error": self.category, "message": str(self), "step": self.step}


class ConfigError(FligaError):
    exit_code = 2
    category = "config"


class NonConvergence(FligaError):
    """Raised when the scalar inverse of a floating map fails to converge."""
    category = "non_convergence"


class SingularMap(FligaError):
    """Raised when the physical Jacobian collapses at a quadrature point."""
    category = "singular_map"


class LinearSolveFailure(FligaError):
    category = "linear_solve"


class NewtonDivergence(FligaError):
    category = "newton_divergence"


class AssemblyMismatch(FligaError):
    """Raised by the finite-difference check mode when a tangent disagrees with its residual."""
    category = "assembly_mismatch"


class StabilityAbort(FligaError):
    """Raised when a quadrature weight turns non-positive during a run."""
    category = "stability_abort"


class ZeroReference(FligaError):
    category = "zero_reference"


class RegulationFailure(FligaError):
    exit_code = 4
    category = "regulation"


class DensityExceeded(FligaError):
    """Raised when refinement asks for a knot the quadrature knot vectors cannot resolve."""
    exit_code = 5
    category = "density_exceeded"
