import math
from pathlib import Path

import numpy as np
import pytest
from geometry_templates import annulus_patch, rectangle_patch
from quadrature import build_point_set, evaluate_points
from scenario_config import ScenarioConfig
from scenarios import (AmDepositionRunner, PatchTestRunner, PlanarExtrusionRunner, TaylorCouetteRunner, area_beyond,
                       boundary_polygon, cumulative_mass_balance, get_runner, inflow_width, mass_balance,
                       mean_span_length, polygon_area, run_patch_test, run_scenario, strand_alignment_angle,
                       swell_ratio)

CONFIGS = Path(__file__).parent.parent / "configs"


def load(name: str, **stepping) -> ScenarioConfig:
    config = ScenarioConfig.from_yaml(CONFIGS / f"{name}.yaml")
    for key, value in stepping.items():
        setattr(config.stepping, key, value)
    return config


@pytest.mark.parametrize(
    "name, runner_type",
    [
        ("patch_test_p2", PatchTestRunner),
        ("taylor_couette", TaylorCouetteRunner),
        ("planar_extrusion_wi1", PlanarExtrusionRunner),
        ("am_deposition_sine", AmDepositionRunner),
    ]
)
def test_get_runner(name, runner_type):
    assert isinstance(get_runner(load(name)), runner_type)


class TestMeasurements:
    def setup_method(self):
        self.patch = rectangle_patch(3.0, 0.3, 6, 3, 2)
        self.point_set = build_point_set(self.patch)
        self.evaluation = evaluate_points(self.point_set, self.patch)

    def test_swell_ratio_of_straight_strand(self):
        assert swell_ratio(self.patch, 2.0, 0.2, [0.2, 0.4]) == pytest.approx(1.5)

    def test_swell_ratio_without_samples(self):
        assert math.isnan(swell_ratio(self.patch, 2.0, 0.2, [5.0, 6.0]))

    @pytest.mark.parametrize(
        "level, sign, expected",
        [
            (1.5, 1.0, 0.45),
            (1.5, -1.0, 0.45),
            (0.7, 1.0, 0.69),
            (-1.0, 1.0, 0.9),
            (4.0, 1.0, 0.0),
        ]
    )
    def test_area_beyond(self, level, sign, expected):
        assert area_beyond(self.patch, 0, level, sign) == pytest.approx(expected, abs=1e-12)

    def test_outline_encloses_the_patch(self):
        assert polygon_area(boundary_polygon(self.patch)) == pytest.approx(0.9)
        assert inflow_width(self.patch, 1) == pytest.approx(0.3)
        with pytest.raises(ValueError):
            boundary_polygon(annulus_patch(0.1, 0.2, 8, 3, 2))

    def test_mass_balance_uses_late_growth_rate(self):
        times = [0.0, 1.0, 2.0, 3.0, 4.0]
        areas = [0.0, 0.1, 0.5, 0.9, 1.3]
        assert mass_balance(times, areas, 0.4) == pytest.approx(1.0)
        assert mass_balance(times, areas, 0.5) == pytest.approx(0.8)
        assert math.isnan(mass_balance(times[:1], areas[:1], 0.4))
        assert math.isnan(mass_balance(times, areas, 0.0))

    def test_cumulative_mass_balance(self):
        assert cumulative_mass_balance(1.0, 0.5, 4.0) == pytest.approx(0.5)
        assert math.isnan(cumulative_mass_balance(1.0, 0.5, 0.0))

    def test_alignment_of_straight_rows(self):
        mask = np.ones(self.point_set.n_points, dtype=bool)
        assert strand_alignment_angle(self.evaluation, (1.0, 0.0), mask) == pytest.approx(0.0, abs=1e-6)
        assert strand_alignment_angle(self.evaluation, (0.0, 1.0), mask) == pytest.approx(90.0)
        assert math.isnan(strand_alignment_angle(self.evaluation, (1.0, 0.0), ~mask))

    def test_mean_span_length(self):
        assert mean_span_length(self.patch, self.point_set) == pytest.approx(0.5)


class TestPatchTest:
    @pytest.mark.parametrize(
        "name, expected_vx, expected_vy",
        [
            ("patch_test_p1", -3.79, -3.04),
            ("patch_test_p2", -4.80, -4.45),
            ("patch_test_p3", -7.13, -6.18),
        ]
    )
    def test_errors_match_reference_levels(self, name, expected_vx, expected_vy):
        report = run_patch_test(load(name))
        record = report.last
        assert len(report.records) == 1
        assert record.L2_vx == pytest.approx(expected_vx, abs=0.5)
        assert record.L2_vy == pytest.approx(expected_vy, abs=0.5)
        assert math.isnan(record.L2_p)
        assert report.summary == {"L2_vx": record.L2_vx, "L2_vy": record.L2_vy}

    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_denser_quadrature_improves_errors(self, degree):
        coarse = run_patch_test(load(f"patch_test_p{degree}")).last
        dense = run_patch_test(load(f"patch_test_p{degree}_dense")).last
        assert coarse.L2_vx - dense.L2_vx >= math.log10(8.0)
        assert coarse.L2_vy - dense.L2_vy >= math.log10(8.0)

    def test_unknown_count(self):
        record = run_patch_test(load("patch_test_p2")).last
        assert record.dofs == 2 * 4 * 5


@pytest.mark.slow
def test_taylor_couette_short_run():
    run = run_scenario(load("taylor_couette", n_steps=20, report_interval=10))
    assert [record.step for record in run.report.records] == [10, 20]
    assert run.report.last.L2_vx < -1.0
    assert run.report.summary["alpha"] == pytest.approx(10.0)
    assert run.simulation.regulation_reports


@pytest.mark.slow
def test_planar_extrusion_short_run():
    run = run_scenario(load("planar_extrusion_wi1", n_steps=10, report_interval=5))
    summary = run.report.summary
    assert summary["relaxation_time"] == pytest.approx(1.0 * 0.2 / (12.0 * 0.5))
    assert "swell_ratio" in summary
    assert math.isnan(run.report.last.L2_vx)


@pytest.mark.slow
def test_am_deposition_short_run():
    run = run_scenario(load("am_deposition_straight", n_steps=10, report_interval=5))
    summary = run.report.summary
    assert "mass_balance" in summary
    assert len(summary["nozzle_position"]) == 2


def record_at_turn(report, turns: float, angular_velocity: float):
    target = turns * 2.0 * math.pi / angular_velocity
    return min(report.records, key=lambda record: abs(record.time - target))


@pytest.mark.slow
def test_taylor_couette_regulation_survives_the_seam():
    run = run_scenario(load("taylor_couette", n_steps=240, report_interval=40))
    assert run.simulation.step == 240
    assert len(run.simulation.regulation_reports) == 240 // 20
    assert all(record["converged"] for record in run.simulation.regulation_reports)


@pytest.mark.slow
def test_taylor_couette_newtonian_three_turns():
    config = load("taylor_couette")
    report = run_scenario(config).report
    omega = config.geometry.angular_velocity
    first = record_at_turn(report, 1.0, omega)
    third = record_at_turn(report, 3.0, omega)
    assert report.summary["turns"] >= 3.0
    assert first.L2_vx <= -2.0
    assert abs(third.L2_vx - first.L2_vx) < 0.3


@pytest.mark.slow
def test_taylor_couette_oldroyd_b_three_turns():
    config = load("taylor_couette_oldroyd_b")
    report = run_scenario(config).report
    omega = config.geometry.angular_velocity
    first = record_at_turn(report, 1.0, omega)
    third = record_at_turn(report, 3.0, omega)
    assert first.L2_vx <= -2.0
    assert abs(third.L2_vx - first.L2_vx) < 0.3
    assert third.L2_p <= -1.5



@pytest.mark.slow
def test_am_deposition_keeps_regulating():
    run = run_scenario(load("am_deposition_straight", n_steps=300, report_interval=30))
    assert run.simulation.step == 300
    assert run.simulation.regulation_failures <= run.simulation.settings.max_regulation_failures


@pytest.fixture(scope="module")
def extrusion_summaries():
    return {weissenberg: run_scenario(load(f"planar_extrusion_wi{weissenberg}")).report.summary
            for weissenberg in (0, 1, 2)}


@pytest.mark.slow
def test_die_swell_grows_with_weissenberg(extrusion_summaries):
    swell = [extrusion_summaries[weissenberg]["swell_ratio"] for weissenberg in (0, 1, 2)]
    assert all(s > 1.0 for s in swell)
    assert swell == sorted(swell)


@pytest.mark.slow
@pytest.mark.parametrize("weissenberg", [0, 1, 2])
def test_extrusion_mass_balance(extrusion_summaries, weissenberg):
    assert abs(extrusion_summaries[weissenberg]["mass_balance"] - 1.0) < 0.05
