"""Run artifacts: error CSV, point clouds, run manifest and checkpoints."""
import csv
import json
import logging
import platform
from pathlib import Path

import numpy as np
import scipy
import yaml

from error_metrics import REPORT_COLUMNS, ErrorReport, velocity_at_points
from floating_basis import FloatingPatch
from quadrature import QuadraturePointSet
from solver import restore_point_set

logger = logging.getLogger(__name__)

POINT_CLOUD_COLUMNS = ("x", "y", "vx", "vy", "p", "tau_xx", "tau_xy", "tau_yy")
CONTROL_COLUMNS = ("row", "index", "x", "y", "h", "vx", "vy")
QUADRATURE_COLUMNS = ("l", "g", "s", "n", "x", "y", "weight")


def write_error_csv(report: ErrorReport, file_path: str | Path) -> Path:
    path = Path(file_path)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in report.rows():
            writer.writerow({key: repr(value) if isinstance(value, float) else value for key, value in row.items()})
    logger.debug("wrote %d error records to %s", len(report.records), path)
    return path


def write_point_cloud(simulation, file_path: str | Path) -> Path:
    """Position, velocity, pressure and polymer stress at every quadrature point (whitespace separated)."""
    path = Path(file_path)
    evaluation = simulation.last_evaluation
    if evaluation is None:
        positions = simulation.point_set.positions
        velocity = np.zeros_like(positions)
        pressure = np.zeros(positions.shape[0])
    else:
        positions = evaluation.positions
        velocity = velocity_at_points(evaluation, simulation.last_result.velocity)
        pressure = np.zeros(positions.shape[0])
        if simulation.last_pressure_data is not None:
            pressure = simulation.last_pressure_data.field(simulation.last_result.pressure)
    tau = simulation.state.polymer_stress
    table = np.column_stack([positions, velocity, pressure, tau[:, 0, 0], tau[:, 0, 1], tau[:, 1, 1]])
    np.savetxt(path, table, fmt="%.17g", header=" ".join(POINT_CLOUD_COLUMNS))
    return path


def control_point_rows(patch: FloatingPatch) -> list[dict]:
    """One record per control point with its regulation value and stored velocity."""
    velocity = patch.field_controls.get("velocity")
    rows = []
    for j in range(patch.n_rows):
        for i, (x, y) in enumerate(patch.control_points[j]):
            vx, vy = velocity[j][i] if velocity is not None else (0.0, 0.0)
            rows.append({"row": j, "index": i, "x": float(x), "y": float(y),
                         "h": float(patch.regulation_points[j][i]), "vx": float(vx), "vy": float(vy)})
    return rows


def write_control_points(patch: FloatingPatch, file_path: str | Path) -> Path:
    path = Path(file_path)
    with open(path, 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=CONTROL_COLUMNS)
        writer.writeheader()
        writer.writerows(control_point_rows(patch))
    return path


def write_quadrature_points(point_set: QuadraturePointSet, file_path: str | Path) -> Path:
    """Quadrature rows, supported and neighbor rows, positions and physical weights for inspection."""
    path = Path(file_path)
    local = np.arange(point_set.n_points) - point_set.row_offsets[point_set.quad_row]
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(QUADRATURE_COLUMNS)
        for k in range(point_set.n_points):
            x, y = point_set.positions[k]
            writer.writerow([int(point_set.quad_row[k]), int(local[k]), int(point_set.supported_row[k]),
                             int(point_set.neighbor_row[k]), repr(float(x)), repr(float(y)),
                             repr(float(point_set.physical_weights[k]))])
    return path


def tool_versions() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "pyyaml": yaml.__version__}


def write_manifest(file_path: str | Path, config, report: ErrorReport, regulation_reports: list[dict],
                   artifacts: list[str]) -> Path:
    """JSON manifest with the config hash, tool versions, event log and produced files."""
    path = Path(file_path)
    manifest = {
        "name": config.name,
        "kind": config.kind.value,
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "versions": tool_versions(),
        "summary": report.summary,
        "refinement_events": report.events,
        "regulation": regulation_reports,
        "artifacts": artifacts,
    }
    path.write_text(json.dumps(manifest, indent=2, default=_jsonable))
    return path


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def save_checkpoint(simulation, file_path: str | Path) -> Path:
    path = Path(file_path)
    path.write_text(json.dumps(simulation.to_dict(), default=_jsonable))
    logger.info("checkpoint written to %s (step %d)", path, simulation.step)
    return path


def load_checkpoint(file_path: str | Path) -> dict:
    data = json.loads(Path(file_path).read_text())
    for key in ("patch", "material_state", "point_set", "time", "step"):
        if key not in data:
            raise KeyError(f"checkpoint {file_path} lacks '{key}'")
    return data


def write_checkpoint_points(data: dict, file_path: str | Path) -> Path:
    """Quadrature positions and polymer stress of a checkpoint document."""
    patch = FloatingPatch.from_dict(data["patch"])
    point_set = restore_point_set(patch, data["point_set"])
    tau = np.asarray(data["material_state"]["polymer_stress"], dtype=float).reshape(-1, 2, 2)
    table = np.column_stack([point_set.positions, tau[:, 0, 0], tau[:, 0, 1], tau[:, 1, 1]])
    path = Path(file_path)
    np.savetxt(path, table, fmt="%.17g", header="x y tau_xx tau_xy tau_yy")
    return path
