"""Scenario configuration documents.

A scenario is one YAML document with a section per parameter group. Parsing validates every section
and raises :class:`errors.ConfigError` naming the offending key; :meth:`ScenarioConfig.to_dict`
reproduces the parsed document field by field.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
try:
    from typing import Self
except ImportError:  # Python < 3.11
    from typing_extensions import Self

import yaml

from constitutive import MaterialParams
from errors import ConfigError
from geometry_templates import NozzleGeometry

logger = logging.getLogger(__name__)


class ScenarioKind(Enum):
    """Benchmark scenarios.

    :cvar PATCH_TEST: volumetric expansion of a warped unit square.
    :cvar TAYLOR_COUETTE: periodic annulus driven by the outer cylinder.
    :cvar PLANAR_EXTRUSION: half nozzle with die swell behind the exit.
    :cvar AM_DEPOSITION: downward nozzle depositing a strand on a moving substrate.
    """
    PATCH_TEST = 'patch_test'
    TAYLOR_COUETTE = 'taylor_couette'
    PLANAR_EXTRUSION = 'planar_extrusion'
    AM_DEPOSITION = 'am_deposition'


@dataclass
class DiscretizationConfig:
    """Characteristic degree, span and row counts and the quadrature sizing."""
    degree: int = 2
    n_spans: int = 8
    n_rows: int = 9
    points_per_span: int | None = None
    density_factors: int | list[int] = 1

    def validate(self, incompressible: bool, periodic: bool) -> None:
        if self.degree < 1:
            raise ValueError(f"degree must be at least 1, got {self.degree}")
        if self.n_rows < 2 or self.n_spans < 1:
            raise ValueError("need at least two rows and one span per row")
        if periodic and self.n_spans <= self.degree:
            raise ValueError(f"periodic rows need more than {self.degree} spans")
        if incompressible and self.n_rows % 2 == 0:
            raise ValueError(f"pressure subdivision needs an odd number of rows, got {self.n_rows}")


@dataclass
class SteppingConfig:
    dt: float = 1e-3
    n_steps: int = 1
    floating_interval: int = 5
    report_interval: int = 1

    def validate(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.floating_interval < 1:
            raise ValueError(f"floating_interval must be at least 1, got {self.floating_interval}")
        if self.n_steps < 0 or self.report_interval < 1:
            raise ValueError("n_steps must be non-negative and report_interval positive")


@dataclass
class RegulationConfig:
    enabled: bool = True
    tolerance: float = 1e-10
    max_iterations: int = 25
    max_halvings: int = 10
    max_failures: int = 3


@dataclass
class RefinementConfig:
    """Adaptive refinement; thresholds default to factors of the initial mean span length."""
    enabled: bool = False
    insert_factor: float = 1.5
    remove_factor: float = 0.5
    insert_threshold: float | None = None
    remove_threshold: float | None = None


@dataclass
class ContactConfig:
    """Penalties; ``slip_ramp`` is ``[start, stop]`` along the flow axis where kappa_S ramps up."""
    penetration_penalty: float = 0.0
    rate_penalty: float = 0.0
    slip_penalty: float = 0.0
    slip_ramp: list[float] | None = None

    def validate(self) -> None:
        for name in ("penetration_penalty", "rate_penalty", "slip_penalty"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if self.slip_ramp is not None and (len(self.slip_ramp) != 2 or self.slip_ramp[0] >= self.slip_ramp[1]):
            raise ValueError(f"slip_ramp must be [start, stop] with start < stop, got {self.slip_ramp}")


@dataclass
class OutputConfig:
    directory: str = "output"
    write_points: bool = True
    snapshot_interval: int = 0
    checkpoint: bool = True
    record_timing: bool = False


@dataclass
class PatchTestGeometry:
    width: float = 1.0
    height: float = 1.0
    warp: list[float] = field(default_factory=lambda: [0.1])


@dataclass
class CouetteGeometry:
    inner_radius: float = 0.1
    outer_radius: float = 0.2
    angular_velocity: float = 7.5


@dataclass
class ExtrusionGeometry:
    """Half nozzle; ``weissenberg`` overrides the material's relaxation time when given.

    :ivar swell_window: distances behind the exit over which the extrudate half-width is averaged.
    """
    nozzle: NozzleGeometry = field(default_factory=NozzleGeometry)
    inflow_speed: float = 0.5
    weissenberg: float | None = None
    swell_window: list[float] = field(default_factory=lambda: [0.2, 0.4])


@dataclass
class DepositionGeometry:
    """Downward nozzle above a substrate.

    :ivar substrate: ``kind`` (planar, sine, obstacle) plus profile parameters.
    :ivar path: waypoints ``[t, x, y]`` and optional vibration of the nozzle.
    :ivar max_interface_angle: alignment bound in degrees reported by the post-check.
    """
    nozzle: NozzleGeometry = field(default_factory=lambda: NozzleGeometry(land_length=0.2, exit_fillet=0.05,
                                                                          reservoir_length=0.2,
                                                                          contraction_length=0.3))
    inflow_speed: float = 0.5
    weissenberg: float | None = None
    standoff: float = 0.2
    substrate: dict = field(default_factory=lambda: {"kind": "planar", "level": -0.2})
    path: dict = field(default_factory=lambda: {"waypoints": [[0.0, 0.0, 0.0], [1.0, 2.4, 0.0]]})
    max_interface_angle: float = 30.0


GEOMETRY_TYPES = {
    ScenarioKind.PATCH_TEST: PatchTestGeometry,
    ScenarioKind.TAYLOR_COUETTE: CouetteGeometry,
    ScenarioKind.PLANAR_EXTRUSION: ExtrusionGeometry,
    ScenarioKind.AM_DEPOSITION: DepositionGeometry,
}


def _section(cls, data: dict | None, name: str):
    """Instantiate a dataclass section, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    data = dict(data)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key '{name}.{key}'")
    if "nozzle" in data and isinstance(data["nozzle"], dict):
        data["nozzle"] = _section(NozzleGeometry, data["nozzle"], f"{name}.nozzle")
    try:
        return cls(**data)
    except (TypeError, ValueError) as error:
        raise ConfigError(f"invalid section '{name}': {error}") from error


@dataclass
class ScenarioConfig:
    """Complete description of one run.

    :ivar kind: scenario to run.
    :type kind: ScenarioKind
    :ivar name: label used for output file names.
    :type name: str
    :ivar geometry: scenario-specific geometry section.
    :ivar material: fluid parameters.
    :type material: MaterialParams
    :ivar contact: penalties, None for scenarios without walls.
    :type contact: ContactConfig | None
    """
    kind: ScenarioKind
    name: str = "scenario"
    geometry: PatchTestGeometry | CouetteGeometry | ExtrusionGeometry | DepositionGeometry | None = None
    material: MaterialParams = field(default_factory=lambda: MaterialParams(1.0))
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    stepping: SteppingConfig = field(default_factory=SteppingConfig)
    regulation: RegulationConfig = field(default_factory=RegulationConfig)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    contact: ContactConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)
    body_force: list[float] = field(default_factory=lambda: [0.0, 0.0])

    def __post_init__(self):
        if self.geometry is None:
            self.geometry = GEOMETRY_TYPES[self.kind]()

    @property
    def incompressible(self) -> bool:
        return self.kind is not ScenarioKind.PATCH_TEST

    @property
    def periodic(self) -> bool:
        return self.kind is ScenarioKind.TAYLOR_COUETTE

    def validate(self) -> None:
        """Check cross-section invariants.

        :raises ConfigError: naming the section that violates them.
        """
        checks = [("discretization", lambda: self.discretization.validate(self.incompressible, self.periodic)),
                  ("stepping", self.stepping.validate)]
        if self.contact is not None:
            checks.append(("contact", self.contact.validate))
        for name, check in checks:
            try:
                check()
            except ValueError as error:
                raise ConfigError(f"invalid section '{name}': {error}") from error
        if self.kind is ScenarioKind.PATCH_TEST and len(self.geometry.warp) not in (1, self.discretization.n_rows):
            raise ConfigError(f"geometry.warp needs 1 or {self.discretization.n_rows} amplitudes")
        if self.kind in (ScenarioKind.PLANAR_EXTRUSION, ScenarioKind.AM_DEPOSITION) and self.contact is None:
            raise ConfigError(f"scenario '{self.kind.value}' needs a 'contact' section")

    @classmethod
    def from_dict(cls, data: dict) -> Self:
        if not isinstance(data, dict):
            raise ConfigError("configuration document must be a mapping")
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"unknown key '{key}'")
        if "kind" not in data:
            raise ConfigError("missing key 'kind'")
        try:
            kind = ScenarioKind(data["kind"])
        except ValueError as error:
            raise ConfigError(f"unknown scenario kind '{data['kind']}'") from error
        contact = data.get("contact")
        config = cls(
            kind=kind,
            name=str(data.get("name", "scenario")),
            geometry=_section(GEOMETRY_TYPES[kind], data.get("geometry"), "geometry"),
            material=_section(MaterialParams, data.get("material", {"solvent_viscosity": 1.0}), "material"),
            discretization=_section(DiscretizationConfig, data.get("discretization"), "discretization"),
            stepping=_section(SteppingConfig, data.get("stepping"), "stepping"),
            regulation=_section(RegulationConfig, data.get("regulation"), "regulation"),
            refinement=_section(RefinementConfig, data.get("refinement"), "refinement"),
            contact=None if contact is None else _section(ContactConfig, contact, "contact"),
            output=_section(OutputConfig, data.get("output"), "output"),
            body_force=[float(v) for v in data.get("body_force", [0.0, 0.0])],
        )
        config.validate()
        return config

    @classmethod
    def from_yaml(cls, yaml_path: str | Path) -> Self:
        path = Path(yaml_path)
        try:
            with open(path, 'r') as f:
                data = yaml.safe_load(f)
        except OSError as error:
            raise ConfigError(f"cannot read configuration {path}: {error}") from error
        except yaml.YAMLError as error:
            raise ConfigError(f"malformed configuration {path}: {error}") from error
        logger.debug("loaded configuration %s", path)
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "name": self.name,
            "geometry": asdict(self.geometry),
            "material": self.material.to_dict(),
            "discretization": asdict(self.discretization),
            "stepping": asdict(self.stepping),
            "regulation": asdict(self.regulation),
            "refinement": asdict(self.refinement),
            "contact": None if self.contact is None else asdict(self.contact),
            "output": asdict(self.output),
            "body_force": list(self.body_force),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=False, sort_keys=False)

    def save_yaml(self, yaml_path: str | Path) -> None:
        Path(yaml_path).write_text(self.to_yaml())

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
