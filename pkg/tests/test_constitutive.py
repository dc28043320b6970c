import numpy as np
import pytest
from constitutive import MaterialModel, MaterialParams, MaterialState, cauchy_stress, oldroyd_b_update


class TestMaterialParams:
    def test_model_from_string(self):
        params = MaterialParams(1.0, 2.0, 0.5, "oldroyd_b")
        assert params.model is MaterialModel.OLDROYD_B

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"solvent_viscosity": -1.0},
            {"solvent_viscosity": 1.0, "model": MaterialModel.OLDROYD_B},
            {"solvent_viscosity": 1.0, "polymer_viscosity": -1.0, "relaxation_time": 1.0,
             "model": MaterialModel.OLDROYD_B},
        ]
    )
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ValueError):
            MaterialParams(**kwargs)

    def test_viscosity_ratio(self):
        assert MaterialParams(1000.0, 8000.0, 0.1, MaterialModel.OLDROYD_B).viscosity_ratio == pytest.approx(1 / 9)

    def test_weissenberg_relaxation_time(self):
        params = MaterialParams.from_weissenberg(1.5, 1000.0, 8000.0, 0.2, 0.5)
        assert params.model is MaterialModel.OLDROYD_B
        assert params.relaxation_time == pytest.approx(0.05)

    def test_zero_weissenberg_is_newtonian(self):
        params = MaterialParams.from_weissenberg(0.0, 1000.0, 8000.0, 0.2, 0.5)
        assert params.model is MaterialModel.NEWTONIAN
        assert params.solvent_viscosity == pytest.approx(9000.0)

    def test_to_dict(self):
        assert MaterialParams(50.0).to_dict() == {"solvent_viscosity": 50.0, "polymer_viscosity": 0.0,
                                                  "relaxation_time": 0.0, "model": "newtonian"}


class TestStress:
    def test_pure_shear(self):
        gradient = np.array([[0.0, 1.0], [0.0, 0.0]])
        sigma = cauchy_stress(0.0, gradient, np.zeros((2, 2)), MaterialParams(50.0))
        assert sigma[0, 1] == pytest.approx(50.0)
        assert sigma[1, 0] == pytest.approx(50.0)
        assert sigma[0, 0] == 0.0 and sigma[1, 1] == 0.0

    def test_pressure_and_polymer_stress_add(self):
        tau = np.array([[[1.0, 2.0], [2.0, 3.0]]])
        sigma = cauchy_stress(np.array([4.0]), np.zeros((1, 2, 2)), tau, MaterialParams(1.0))
        assert np.allclose(sigma, [[[-3.0, 2.0], [2.0, -1.0]]])


class TestOldroydB:
    def setup_method(self):
        self.params = MaterialParams(0.5, 1.5, 0.1, MaterialModel.OLDROYD_B)
        self.shear = np.array([[[0.0, 2.0], [0.0, 0.0]]])

    def test_newtonian_has_no_polymer_stress(self):
        state = MaterialState(np.ones((3, 2, 2)), np.ones((3, 2, 2)))
        updated = oldroyd_b_update(state, 0.01, MaterialParams(1.0))
        assert np.all(updated.polymer_stress == 0.0)

    def test_first_step_from_rest(self):
        state = MaterialState.zeros(1).with_velocity_gradient(self.shear)
        updated = oldroyd_b_update(state, 1e-3, self.params)
        assert updated.polymer_stress[0, 0, 1] == pytest.approx(1e-3 * 1.5 * 2.0 / 0.1)
        assert updated.polymer_stress[0, 0, 0] == 0.0

    def test_steady_shear_is_a_fixed_point(self):
        rate = 2.0
        eta_p = self.params.polymer_viscosity
        lam = self.params.relaxation_time
        steady = np.array([[[2.0 * lam * eta_p * rate ** 2, eta_p * rate], [eta_p * rate, 0.0]]])
        state = MaterialState(steady, self.shear)
        updated = oldroyd_b_update(state, 1e-3, self.params)
        assert np.allclose(updated.polymer_stress, steady)

    def test_stress_stays_symmetric(self):
        gradient = np.array([[[0.3, 1.1], [-0.4, -0.3]]])
        state = MaterialState(np.array([[[1.0, 0.2], [0.2, 0.5]]]), gradient)
        tau = oldroyd_b_update(state, 1e-2, self.params).polymer_stress
        assert np.allclose(tau, np.swapaxes(tau, 1, 2))

    def test_state_dict_round_trip(self):
        state = MaterialState(np.arange(8.0).reshape(2, 2, 2), np.ones((2, 2, 2)))
        restored = MaterialState.from_dict(state.to_dict())
        assert np.array_equal(restored.polymer_stress, state.polymer_stress)
        assert np.array_equal(restored.prev_velocity_gradient, state.prev_velocity_gradient)
