import numpy as np
import pytest

from roadsig import deadreck as dr
from roadsig.core import Drive, build_route
from roadsig.preprocess import GRAVITY

LEVEL = dr.NavState(np.eye(3), np.zeros(3), np.zeros(3))


def body_drive(accel, rate_hz, gyro=None):
    """Drive whose body-frame specific force is ``accel`` (gravity added) on a level body."""
    accel = np.asarray(accel, dtype=float)
    imu = np.zeros((len(accel), 6))
    imu[:, :3] = accel
    imu[:, 2] += GRAVITY
    if gyro is not None:
        imu[:, 3:] = gyro
    return Drive(np.arange(len(accel)) / rate_hz, imu, rate_hz)


def const_drive(a, seconds, rate_hz=100.0):
    n = int(round(seconds * rate_hz)) + 1
    return body_drive(np.tile(a, (n, 1)), rate_hz)


def final_x(res):
    return res.xy[-1, 0]


class TestExamples:
    def test_stationary_tilted(self):
        att = dr.rot_z(0.7) @ np.array([[1, 0, 0], [0, np.cos(0.3), -np.sin(0.3)], [0, np.sin(0.3), np.cos(0.3)]])
        n = 60 * 100 + 1
        imu = np.zeros((n, 6))
        imu[:, :3] = att.T @ np.array([0.0, 0.0, GRAVITY])
        drive = Drive(np.arange(n) / 100.0, imu, 100.0)
        res = dr.dead_reckon(drive, dr.NavState(att, np.zeros(3), np.zeros(3)))
        assert np.abs(res.xy).max() < 1e-6
        assert len(res.t) == 61

    def test_constant_accel(self):
        assert final_x(dr.dead_reckon(const_drive([1.0, 0, 0], 10), LEVEL)) == pytest.approx(50.0, rel=0.005)

    def test_bias_drift(self):
        assert final_x(dr.dead_reckon(const_drive([0.1, 0, 0], 60), LEVEL)) == pytest.approx(180.0, rel=0.05)

    def test_quadratic_growth(self):
        res = dr.dead_reckon(const_drive([0.1, 0, 0], 60), LEVEL)
        ratio = res.xy[60, 0] / res.xy[30, 0]
        assert 3.8 <= ratio <= 4.2

    def test_yaw_rate_turns_velocity(self):
        # forward accel for 1 s, then a quarter turn; motion continues along the new heading in the local frame
        rate = 100.0
        n = 400
        acc = np.zeros((n, 3))
        acc[:100, 0] = 1.0
        gyro = np.zeros((n, 3))
        gyro[100:200, 2] = np.pi / 2
        res = dr.dead_reckon(body_drive(acc, rate, gyro), LEVEL, keep_attitude=True)
        np.testing.assert_allclose(res.attitudes[-1], dr.rot_z(np.pi / 2), atol=1e-2)
        # the body turns but the local-frame velocity (no centripetal force applied) keeps pointing east
        assert res.t[-1] == 3.0
        assert res.xy[-1, 0] == pytest.approx(2.5, rel=0.01) and abs(res.xy[-1, 1]) < 1e-6


def test_order_dt_squared():
    amp, omega, seconds = 1.0, 2.0, 5.0

    def max_err(rate):
        t = np.arange(int(seconds * rate) + 1) / rate
        acc = np.zeros((len(t), 3))
        acc[:, 0] = amp * np.sin(omega * t)
        res = dr.dead_reckon(body_drive(acc, rate), LEVEL, output_hz=rate)
        exact = amp / omega * res.t - amp / omega**2 * np.sin(omega * res.t)
        return np.abs(res.xy[:, 0] - exact).max()

    ratio = max_err(50.0) / max_err(100.0)
    assert 3.5 <= ratio <= 4.5


def test_attitude_stays_orthonormal():
    rate = 100.0
    n = int(600 * rate)
    t = np.arange(n) / rate
    gyro = np.stack([0.3 * np.sin(0.5 * t), 0.2 * np.cos(0.3 * t), 0.1 * np.sin(0.1 * t)], axis=1)
    res = dr.dead_reckon(body_drive(np.zeros((n, 3)), rate, gyro), LEVEL, output_hz=0.1, keep_attitude=True)
    dets = [np.linalg.det(a) for a in res.attitudes]
    assert max(abs(d - 1) for d in dets) < 1e-6
    assert max(np.abs(a @ a.T - np.eye(3)).max() for a in res.attitudes) < 1e-6


def test_non_finite_sample_index():
    drive = const_drive([0.0, 0, 0], 2)
    imu = drive.imu.copy()
    imu[57, 4] = np.nan
    with pytest.raises(dr.NonFiniteSampleError) as err:
        dr.dead_reckon(Drive(drive.t, imu, drive.rate_hz), LEVEL)
    assert err.value.index == 57


def test_nav_state_rejects_non_rotation():
    with pytest.raises(ValueError):
        dr.NavState(2 * np.eye(3), np.zeros(3), np.zeros(3))


def test_initial_state_from_route():
    route = build_route(np.array([[5.0, 5.0], [5.0, 50.0]]), 3)
    drive = const_drive([0.0, 0, 0], 3)
    init = dr.initial_state(drive, route)
    np.testing.assert_allclose(init.position, [5.0, 5.0, 0.0])
    np.testing.assert_allclose(init.attitude, dr.rot_z(np.pi / 2), atol=1e-12)


@pytest.mark.parametrize("q", [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 0, 1), (0.5, 0.5, -0.5, 0.5)])
def test_quaternion_roundtrip(q):
    m = dr.quat_to_matrix(q)
    np.testing.assert_allclose(dr.quat_to_matrix(dr._quat_from_matrix(m)), m, atol=1e-12)
