import math

import numpy as np
import pytest
from scipy.stats import chi2

from mhfdia.errors import ConfigError
from mhfdia.estimators import UkfState, ukf_predict, ukf_update
from mhfdia.vehicle import (TRACE_COLUMNS, PathSpec, VehicleParams, VehicleRunConfig, VehicleState,
                            attacker_linearize, input_matrix, kinematic_control, linearized_output,
                            measurement_matrix, measurement_state_map, run_vehicle_scenario,
                            sample_measurement_noise, tracking_summary, vehicle_measure, vehicle_step,
                            window_residual)


@pytest.fixture(scope="module")
def params():
    return VehicleParams()


def test_rest_and_axis_motion(params):
    s = VehicleState(0.4, 1.0, -2.0)
    assert vehicle_step(s, np.zeros(2), params) == s
    p0 = VehicleParams(d=1e-12)
    s1 = vehicle_step(VehicleState(0.0, 0.0, 0.0), (1.0, 0.0), p0)
    assert s1.x == pytest.approx(0.01) and s1.y == 0.0 and s1.theta == 0.0


def test_constant_input_circle_closes(params):
    v, w = 0.3, 0.5
    s = VehicleState(0.0, 0.0, 0.0)
    for _ in range(int(round(2 * math.pi / w / params.Ts))):
        s = vehicle_step(s, (v, w), params)
    assert math.hypot(s.x, s.y) <= 0.05


def test_state_helpers():
    s = VehicleState(3 * math.pi, 1.0, 2.0)
    assert s.wrapped_theta == pytest.approx(math.pi)
    assert np.array_equal(VehicleState.from_array(s.as_array()).as_array(), s.as_array())
    assert np.array_equal(s.z, [1.0, 2.0])


def test_controller_examples(params):
    est = VehicleState(0.3, 1.0, 2.0)
    assert not np.any(kinematic_control(est, est.z, np.zeros(2), params))
    p1 = VehicleParams(d=1.0, K_track=1.0)
    u = kinematic_control(VehicleState(0.0, 0.0, 0.0), np.array([1.0, 0.0]), np.zeros(2), p1)
    assert np.allclose(u, [1.0, 0.0])


def test_params_validation():
    with pytest.raises(ConfigError):
        VehicleParams(d=0.0)
    with pytest.raises(ConfigError):
        VehicleParams(K_track=(1.0, 2.0, 0.0, 1.0))
    with pytest.raises(ConfigError):
        VehicleParams(K_track=-1.0)
    with pytest.raises(ConfigError):
        VehicleParams(meas_std=(0.1,))


def test_measurement_model(params):
    assert not np.any(vehicle_measure(VehicleState(0.7, 0.0, 0.0), params))
    rng = np.random.default_rng(0)
    noise = rng.standard_normal(6)
    s = VehicleState(rng.uniform(-3, 3), rng.standard_normal(), rng.standard_normal())
    y = vehicle_measure(s, params, noise)
    assert np.allclose(y[2:4], s.z + noise[2:4])
    th, x, yy = s.theta, s.x, s.y
    k = 1 / (4 * params.r)
    oracle = np.array([math.cos(th) * x, math.sin(th) * yy, x, yy, k * x + params.L_half * k * yy,
                       k * x - params.L_half * k * yy])
    assert np.allclose(y - noise, oracle, atol=1e-14)
    assert np.allclose(measurement_state_map(params)(s.as_array()), oracle)


def test_noise_truncated_at_three_sigma(params):
    rng = np.random.default_rng(1)
    draws = np.array([sample_measurement_noise(rng, params) for _ in range(5000)])
    assert np.all(np.abs(draws) <= 3 * np.asarray(params.meas_std) + 1e-15)


def test_linearization_shapes_and_jacobian(params):
    x_eq = np.array([0.6, 1.2, -0.4])
    model = attacker_linearize(x_eq, params)
    assert model.H.shape == (120, 3) and not model.degenerate
    g = measurement_state_map(params)
    J = np.column_stack([(g(x_eq + 1e-6 * e) - g(x_eq - 1e-6 * e)) / 2e-6 for e in np.eye(3)])
    assert np.allclose(model.C, J, atol=1e-8)
    # the affine offset makes the model exact at the linearization point
    assert np.allclose(model.H @ x_eq + model.offset, np.tile(g(x_eq), 20), atol=1e-12)


def test_degenerate_linearization_point(params):
    C = linearized_output([0.0, 0.0, 0.0], params)
    assert not np.any(C[:4, 0])
    assert np.any(C[4:, 0] == 0)  # encoder rows carry no heading term either
    assert attacker_linearize([0.0, 0.0, 0.0], params).degenerate


def test_input_response_accumulates(params):
    model = attacker_linearize([0.5, 1.0, 1.0], params, T_f=4)
    u = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    G = model.input_response(u).reshape(4, 6)
    CB = model.C @ model.B
    assert not np.any(G[0])
    assert np.allclose(G[3], CB @ u.sum(axis=0))
    with pytest.raises(ConfigError):
        model.input_response(u[:2])


def test_window_residual_zero_on_model_trajectory(params):
    x0 = np.array([0.5, 1.0, 1.0])
    model = attacker_linearize(x0, params, T_f=5)
    u = np.random.default_rng(2).standard_normal((4, 2))
    y = model.H @ x0 + model.input_response(u) + model.offset
    assert window_residual(model, y, u) <= 1e-10


def test_paths_start_where_the_vehicle_starts():
    for name in ("line", "circle", "figure8"):
        ps = PathSpec(name)
        z0, _ = ps.point(0.0)
        s = ps.initial_state()
        off = np.linalg.norm(s.z - z0)
        assert off <= 1e-12
    with pytest.raises(ConfigError):
        PathSpec("spiral")
    with pytest.raises(ConfigError):
        PathSpec("line", speed=0.0)


@pytest.mark.parametrize("name", ["line", "circle", "figure8"])
def test_path_velocity_is_derivative(name):
    ps = PathSpec(name, 0.3)
    for t in (0.5, 7.3, 20.0, 33.0):
        z0, dz = ps.point(t)
        z1, _ = ps.point(t + 1e-6)
        assert np.allclose((z1 - z0) / 1e-6, dz, atol=1e-5)
        assert np.linalg.norm(dz) == pytest.approx(0.3)


def test_run_config_defaults_and_validation():
    assert VehicleRunConfig("line").attack_start == 6.0
    c = VehicleRunConfig("circle")
    assert c.attack_start == 50.0 and c.duration == 60.0
    with pytest.raises(ConfigError):
        VehicleRunConfig("line", attack="range")
    with pytest.raises(ConfigError):
        VehicleRunConfig("line", attack_start=0.1)


def test_nominal_line_tracking_converges():
    tr = run_vehicle_scenario(VehicleRunConfig("line", attack="none", duration=8.0))
    assert tr.columns == TRACE_COLUMNS and len(tr) == 800
    t, dev = tr.column("t"), tr.column("deviation")
    assert np.all(dev[t >= 5.0] < 0.05)
    assert tr.column("alarm").sum() == 0


def test_ukf_innovations_are_consistent(params):
    """Normalized innovation squared over 1000 nominal steps follows a chi-square(6) band."""
    rng = np.random.default_rng(7)
    path = PathSpec("line")
    truth = path.initial_state()
    dyn = lambda x, u: x + params.Ts * input_matrix(x[0], params.d) @ u  # noqa: E731
    meas = measurement_state_map(params)
    ukf = UkfState(truth.as_array(), 1e-4 * np.eye(3), params.Q, params.R)
    u = np.zeros(2)
    nis = []
    for k in range(1001):
        y = vehicle_measure(truth, params, sample_measurement_noise(rng, params))
        if k > 0:
            ukf, pred = ukf_predict(ukf, dyn, u, meas)
            nu = y - pred.y_pred
            nis.append(float(nu @ np.linalg.solve(pred.P_y, nu)))
            ukf = ukf_update(ukf, pred, y)
        z_d, zd = path.point(k * params.Ts)
        u = kinematic_control(VehicleState.from_array(ukf.x), z_d, zd, params)
        truth = vehicle_step(truth, u, params, rng.standard_normal(3) * np.asarray(params.process_std))
    nis = np.array(nis)
    assert 0.7 * 6 <= nis.mean() <= 1.3 * 6
    assert np.mean(nis > chi2.ppf(0.99, 6)) <= 0.03


def test_attack_moves_vehicle_quietly():
    cfg = VehicleRunConfig("line")
    tr = run_vehicle_scenario(cfg)
    s = tracking_summary(tr, cfg.attack_start)
    assert s["alarms"] == 0 and s["max_residual"] <= 1.0
    assert s["post_max"] >= 3 * s["nominal_max"]
    on = tr.column("t") >= cfg.attack_start
    assert np.any(tr.column("e3")[on]) and np.any(tr.column("alpha")[on])
    assert not np.any(tr.column("e3")[~on])


def test_eig_attack_runs_on_vehicle():
    cfg = VehicleRunConfig("line", attack="eig", duration=8.0)
    tr = run_vehicle_scenario(cfg)
    assert len(tr) == 800 and not tr.truncated
