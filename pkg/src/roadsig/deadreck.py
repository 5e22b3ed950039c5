"""Strap-down dead reckoning baseline.

Gyro rates propagate a body-to-local attitude quaternion; specific force is
rotated into the local east-north-up frame, gravity removed, and the result
integrated twice with the trapezoidal rule. No aiding of any kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Drive, RoadsigError, RouteModel
from .preprocess import GRAVITY, alignment_rotation


class NonFiniteSampleError(RoadsigError):
    def __init__(self, index: int):
        super().__init__(f"non-finite IMU sample at index {index}")
        self.index = index


@dataclass(frozen=True)
class NavState:
    attitude: np.ndarray  # body -> local rotation matrix
    velocity: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        att = np.asarray(self.attitude, dtype=float)
        if att.shape != (3, 3) or not np.allclose(att @ att.T, np.eye(3), atol=1e-6):
            raise ValueError("attitude must be an orthonormal 3x3 matrix")
        object.__setattr__(self, "attitude", att)
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(3))
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))


@dataclass
class DeadReckoningResult:
    t: np.ndarray
    xy: np.ndarray
    attitudes: list  # attitude matrix at each output time


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def initial_state(drive: Drive, route: RouteModel, level_seconds: float = 1.0) -> NavState:
    """At rest at the route start, tilt from the mean accel, heading along the first edge."""
    n = max(1, int(round(level_seconds * drive.rate_hz)))
    tilt = alignment_rotation(drive.imu[:n, :3].mean(axis=0))
    att = rot_z(route.heading_at(0.0)) @ tilt
    x0, y0 = route.polyline[0]
    return NavState(att, np.zeros(3), np.array([x0, y0, 0.0]))


def _quat_from_matrix(m: np.ndarray) -> list:
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    else:
        i = int(np.argmax([m[0, 0], m[1, 1], m[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k]) * 2
        q = [0.0] * 4
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    norm = math.sqrt(sum(v * v for v in q))
    return [v / norm for v in q]


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def dead_reckon(drive: Drive, init: NavState, output_hz: float = 1.0,
                keep_attitude: bool = False) -> DeadReckoningResult:
    """Integrate a drive from ``init``; positions are emitted every ``1 / output_hz`` s."""
    imu = drive.imu
    bad = np.flatnonzero(~np.all(np.isfinite(imu), axis=1))
    if len(bad):
        raise NonFiniteSampleError(int(bad[0]))
    dt = 1.0 / drive.rate_hz
    every = max(1, int(round(drive.rate_hz / output_hz)))
    w, x, y, z = _quat_from_matrix(init.attitude)
    vx, vy, vz = map(float, init.velocity)
    px, py, pz = map(float, init.position)
    acc = imu[:, :3].tolist()
    gyr = imu[:, 3:].tolist()

    def to_local(f, w, x, y, z):
        fx, fy, fz = f
        return (
            (1 - 2 * (y * y + z * z)) * fx + 2 * (x * y - w * z) * fy + 2 * (x * z + w * y) * fz,
            2 * (x * y + w * z) * fx + (1 - 2 * (x * x + z * z)) * fy + 2 * (y * z - w * x) * fz,
            2 * (x * z - w * y) * fx + 2 * (y * z + w * x) * fy + (1 - 2 * (x * x + y * y)) * fz - GRAVITY,
        )

    ts, xs, atts = [], [], []
    ax, ay, az = to_local(acc[0], w, x, y, z)
    for i in range(len(acc)):
        if i % every == 0:
            ts.append(drive.t[i])
            xs.append((px, py))
            if keep_attitude:
                atts.append(quat_to_matrix((w, x, y, z)))
        if i == len(acc) - 1:
            break
        # attitude: exact rotation over dt at the current rate
        gx, gy, gz = gyr[i]
        rate = math.sqrt(gx * gx + gy * gy + gz * gz)
        half = 0.5 * rate * dt
        if rate > 0:
            c, s = math.cos(half), math.sin(half) / rate
            dw, dx, dy, dz = c, gx * s, gy * s, gz * s
            w, x, y, z = (
                w * dw - x * dx - y * dy - z * dz,
                w * dx + x * dw + y * dz - z * dy,
                w * dy - x * dz + y * dw + z * dx,
                w * dz + x * dy - y * dx + z * dw,
            )
            norm = math.sqrt(w * w + x * x + y * y + z * z)
            w, x, y, z = w / norm, x / norm, y / norm, z / norm
        bx, by, bz = to_local(acc[i + 1], w, x, y, z)
        nvx = vx + 0.5 * (ax + bx) * dt
        nvy = vy + 0.5 * (ay + by) * dt
        nvz = vz + 0.5 * (az + bz) * dt
        px += 0.5 * (vx + nvx) * dt
        py += 0.5 * (vy + nvy) * dt
        pz += 0.5 * (vz + nvz) * dt
        vx, vy, vz = nvx, nvy, nvz
        ax, ay, az = bx, by, bz
    return DeadReckoningResult(np.array(ts), np.array(xs).reshape(-1, 2), atts)


def mean_error(result: DeadReckoningResult, drive: Drive) -> float:
    """Mean planar distance to ground truth at the output times."""
    gt = drive.position_at(result.t)
    return float(np.mean(np.hypot(*(result.xy - gt).T)))
