from pathlib import Path

import pytest
from constitutive import MaterialModel
from errors import ConfigError
from geometry_templates import NozzleGeometry
from scenario_config import ScenarioConfig, ScenarioKind

CONFIGS = Path(__file__).parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    config = ScenarioConfig.from_yaml(path)
    assert config.name == path.stem
    assert ScenarioConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()


class TestScenarioConfig:
    def setup_method(self):
        self.data = {
            "kind": "planar_extrusion",
            "name": "swell",
            "geometry": {"nozzle": {"exit_radius": 0.2, "land_length": 0.8}, "weissenberg": 1.0},
            "material": {"solvent_viscosity": 1000.0, "polymer_viscosity": 8000.0},
            "discretization": {"degree": 2, "n_spans": 12, "n_rows": 9, "density_factors": 4},
            "contact": {"penetration_penalty": 7.5e5, "rate_penalty": 1.5e3, "slip_penalty": 1e3,
                        "slip_ramp": [1.8, 2.0]},
        }

    def test_sections_parsed(self):
        config = ScenarioConfig.from_dict(self.data)
        assert config.kind is ScenarioKind.PLANAR_EXTRUSION
        assert isinstance(config.geometry.nozzle, NozzleGeometry)
        assert config.geometry.nozzle.land_length == 0.8
        assert config.material.model is MaterialModel.NEWTONIAN
        assert config.contact.slip_ramp == [1.8, 2.0]
        assert config.incompressible
        assert not config.periodic

    def test_defaults(self):
        config = ScenarioConfig.from_dict({"kind": "taylor_couette"})
        assert config.geometry.angular_velocity == 7.5
        assert config.stepping.n_steps == 1
        assert config.periodic
        assert config.contact is None

    @pytest.mark.parametrize(
        "key, value",
        [
            ("colour", "blue"),
            ("kind", "dam_break"),
            ("discretization", {"degree": 2, "n_knots": 3}),
            ("discretization", {"n_rows": 8}),
            ("stepping", {"dt": -1.0}),
            ("contact", {"slip_ramp": [2.0, 1.0]}),
            ("geometry", {"nozzle": {"exit_radius": 0.0}}),
            ("material", {"solvent_viscosity": 1.0, "model": "maxwell"}),
        ]
    )
    def test_invalid_documents_rejected(self, key, value):
        self.data[key] = value
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(self.data)

    def test_missing_contact_rejected(self):
        del self.data["contact"]
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(self.data)

    @pytest.mark.parametrize("n_rows", [3, 4, 9])
    def test_patch_defaults_validate(self, n_rows):
        config = ScenarioConfig.from_dict({"kind": "patch_test", "discretization": {"n_rows": n_rows}})
        assert config.geometry.warp == [0.1]
        assert ScenarioConfig.from_dict({"kind": "patch_test"}).discretization.n_rows == 9

    def test_patch_warp_length_checked(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"kind": "patch_test", "geometry": {"warp": [0.0, 0.1]},
                                      "discretization": {"n_rows": 4}})

    def test_hash_is_stable(self):
        first = ScenarioConfig.from_dict(self.data)
        second = ScenarioConfig.from_dict(dict(reversed(list(self.data.items()))))
        assert first.config_hash() == second.config_hash()
        second.stepping.dt = 2e-3
        assert first.config_hash() != second.config_hash()

    def test_yaml_round_trip(self, tmp_path):
        config = ScenarioConfig.from_dict(self.data)
        path = tmp_path / "swell.yaml"
        config.save_yaml(path)
        assert ScenarioConfig.from_yaml(path).to_dict() == config.to_dict()

    def test_unreadable_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("kind: [patch_test\n")
        with pytest.raises(ConfigError):
            ScenarioConfig.from_yaml(path)
        with pytest.raises(ConfigError):
            ScenarioConfig.from_yaml(tmp_path / "missing.yaml")
