import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leonav import inertial
from leonav.errors import GimbalLock
from leonav.inertial import ImuNoiseModel, ImuSample, NavState

G = 9.80665


def level(theta=(0.0, 0.0, 0.0), v=(0.0, 0.0, 0.0)):
    return NavState(np.zeros(3), np.array(v, float), np.array(theta, float))


def test_static_equilibrium():
    s = level()
    out = inertial.mechanize(s, ImuSample(0.0, np.array([0.0, 0.0, G]), np.zeros(3)), 0.1)
    np.testing.assert_allclose(out.as_vector(), s.as_vector(), atol=1e-15)
    assert out.t == pytest.approx(0.1)


def test_pure_yaw_rotation():
    w, T, dt = 0.3, 20.0, 0.1
    s = level()
    sample = ImuSample(0.0, np.array([0.0, 0.0, G]), np.array([0.0, 0.0, w]))
    for _ in range(int(T / dt)):
        s = inertial.mechanize(s, sample, dt)
    assert inertial.wrap_angle(s.theta[2] - w * T) == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(s.p_enu, 0.0, atol=1e-12)
    assert -math.pi < s.theta[2] <= math.pi


def test_dt_bounds():
    s = level()
    sample = ImuSample(0.0, np.array([0.0, 0.0, G]), np.zeros(3))
    for dt in (0.0, -0.1, 0.6):
        with pytest.raises(ValueError):
            inertial.mechanize(s, sample, dt)


def test_gimbal_lock():
    s = level(theta=(0.0, math.pi / 2 - 5e-4, 0.0))
    with pytest.raises(GimbalLock):
        inertial.mechanize(s, ImuSample(0.0, np.zeros(3), np.zeros(3)), 0.1)


def test_circular_dead_reckoning_noiseless():
    truth = inertial.circular_trajectory(20.0, 10.0)
    samples = inertial.synthesize_imu(truth, rate=10.0)
    est = inertial.dead_reckon(truth[0], samples, 0.1)
    assert np.linalg.norm(est[-1].p_enu - truth[-1].p_enu) < 0.5


@pytest.mark.parametrize("make", [
    lambda: inertial.static_trajectory(20.0, 10.0),
    lambda: inertial.constant_velocity_trajectory(20.0, 10.0),
    lambda: inertial.circular_trajectory(20.0, 10.0),
], ids=["static", "constant-velocity", "circular"])
def test_round_trip(make):
    truth = make()
    samples = inertial.synthesize_imu(truth, rate=10.0)
    est = inertial.dead_reckon(truth[0], samples)
    err = max(np.linalg.norm(a.p_enu - b.p_enu) for a, b in zip(est, truth))
    assert err < 1e-3
    for a, b in zip(est, truth):
        np.testing.assert_allclose(a.v_enu, b.v_enu, atol=1e-9)
        assert np.allclose(inertial.wrap_angle(a.theta - b.theta), 0.0, atol=1e-9)


def test_static_samples():
    truth = inertial.static_trajectory(2.0, 10.0)
    for s in inertial.synthesize_imu(truth, rate=10.0):
        np.testing.assert_allclose(s.gyro, 0.0, atol=1e-15)
        np.testing.assert_allclose(s.accel, [0.0, 0.0, G], atol=1e-12)


def test_rate_mismatch():
    with pytest.raises(ValueError):
        inertial.synthesize_imu(inertial.static_trajectory(1.0, 10.0), rate=20.0)


def test_noise_statistics_and_determinism():
    truth = inertial.static_trajectory(1000.0, 10.0)
    noise = ImuNoiseModel.tactical(10.0)
    a = inertial.synthesize_imu(truth, noise, 10.0, seed=4)
    b = inertial.synthesize_imu(truth, noise, 10.0, seed=4)
    acc = np.array([s.accel for s in a]) - [0.0, 0.0, G]
    gyr = np.array([s.gyro for s in a])
    assert acc.size >= 1e4
    assert acc.std() == pytest.approx(noise.accel_noise_std, rel=0.05)
    assert gyr.std() == pytest.approx(noise.gyro_noise_std, rel=0.05)
    assert all(np.array_equal(x.accel, y.accel) and np.array_equal(x.gyro, y.gyro) for x, y in zip(a, b))


def test_biases_added():
    truth = inertial.static_trajectory(1.0, 10.0)
    noise = ImuNoiseModel(accel_bias=np.array([0.01, 0.0, 0.0]), gyro_bias=np.array([0.0, 0.0, 1e-3]))
    s = inertial.synthesize_imu(truth, noise, 10.0)[0]
    np.testing.assert_allclose(s.accel, [0.01, 0.0, G], atol=1e-12)
    np.testing.assert_allclose(s.gyro, [0.0, 0.0, 1e-3], atol=1e-15)


def test_tactical_conversion():
    n = ImuNoiseModel.tactical(rate=100.0, gyro_arw_deg=0.005, accel_vrw_ug=50.0)
    assert n.gyro_noise_std == pytest.approx(math.radians(0.005) * 10.0)
    assert n.accel_noise_std == pytest.approx(50e-6 * G * 10.0)
    with pytest.raises(ValueError):
        ImuNoiseModel(accel_noise_std=-1.0)


def test_richardson_order():
    s = NavState(np.zeros(3), np.array([1.0, 2.0, 0.0]), np.array([0.2, 0.3, 1.0]))
    sample = ImuSample(0.0, np.array([0.5, -0.2, 9.9]), np.array([0.3, -0.2, 0.5]))

    def gap(dt):
        one = inertial.mechanize(s, sample, dt).as_vector()
        two = inertial.mechanize(inertial.mechanize(s, sample, dt / 2), sample, dt / 2).as_vector()
        return np.linalg.norm(one - two)

    for dt in (0.2, 0.1):
        assert 3.0 <= gap(dt) / gap(dt / 2) <= 5.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0), st.floats(0.01, 0.5))
def test_yaw_stays_wrapped(yaw, rate, dt):
    s = level(theta=(0.0, 0.0, yaw))
    out = inertial.mechanize(s, ImuSample(0.0, np.array([0.0, 0.0, G]), np.array([0.0, 0.0, rate * 10])), dt)
    assert -math.pi < out.theta[2] <= math.pi


def test_body_to_enu_orthonormal_and_yaw_convention():
    R = inertial.body_to_enu(np.array([0.1, -0.2, 2.5]))
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    # yaw = pi/2 sends body x to north
    R = inertial.body_to_enu(np.array([0.0, 0.0, math.pi / 2]))
    np.testing.assert_allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


def test_state_vector_round_trip():
    x = np.arange(9.0) * 0.1
    x[8] = 4.0
    s = NavState.from_vector(x, 3.0)
    assert s.t == 3.0
    assert s.theta[2] == pytest.approx(4.0 - 2 * math.pi)
    np.testing.assert_array_equal(s.as_vector()[:8], x[:8])
