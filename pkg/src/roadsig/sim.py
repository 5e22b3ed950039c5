"""Synthetic drives along a route whose segments carry distinct vibration signatures.

The road is described as a vertical excitation (m/s^2 at the wheel) that is a
function of arc length: per-segment texture sinusoids, fixed bump events and a
roughness component whose realization changes from drive to drive (lane
wander) while its level is a property of the segment. Spatial content turns
into temporal content through the vehicle speed. The body response is a
base-excited second-order system, then the vehicle-frame signals are rotated
into the sensor mount frame, gravity is added and sensor errors applied.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import signal as sps

from .core import Dataset, Drive, RouteError, RouteModel, build_route, write_drive_csv, write_route_csv
from .preprocess import GRAVITY

SIM_MANIFEST_VERSION = 1
ROUGHNESS_N0 = 0.1  # cycles/m, reference spatial frequency of the level
ROUGHNESS_BAND = (0.05, 2.0)  # cycles/m
ROUGHNESS_DS = 0.1  # m, spatial grid of the roughness realization
KINEMATIC_DT = 0.1  # s


@dataclass(frozen=True)
class SegmentSignature:
    roughness_psd_level: float  # Gd(n0) in m^3 (ISO 8608 displacement PSD)
    texture_peaks: tuple  # ((cycles/m, m/s^2), ...)
    bump_events: tuple  # ((arc length m, m/s^2, duration s), ...)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    # route geometry
    route_kind: str = "random"  # "random" | "straight"
    route_length_m: float = 2000.0
    straight_leg_m: tuple = (60.0, 300.0)
    turn_radius_m: tuple = (25.0, 120.0)
    turn_angle_deg: tuple = (20.0, 100.0)
    # signatures
    n_segments: int = 20
    texture_peaks_per_segment: int = 3
    texture_freq_cpm: tuple = (0.08, 0.8)
    texture_amplitude: tuple = (0.4, 1.2)
    texture_scale: float = 1.0
    texture_min_separation: float = 0.3  # min log-frequency gap between any two segments' peak sets
    roughness_level: tuple = (4e-6, 64e-6)
    roughness_scale: float = 1.0
    bumps_per_segment: float = 0.5
    bump_amplitude: tuple = (2.0, 5.0)
    bump_duration_s: tuple = (0.05, 0.2)
    # speed profile
    speed_mean: float = 10.0
    speed_drive_std: float = 0.05  # relative spread of cruise speed between drives
    speed_std: float = 1.0  # within-drive fluctuation, m/s
    speed_tau_s: float = 20.0
    accel_limit: float = 1.5
    stop_prob: float = 0.0  # chance of a full stop at each segment boundary
    stop_duration_s: tuple = (2.0, 8.0)
    start_from_rest: bool = True
    initial_rest_s: float = 2.0  # stationary lead-in when starting from rest
    # vehicle and sensor
    suspension_hz: float = 1.5
    suspension_damping: float = 0.3
    pitch_coupling: float = 0.01  # rad/s per m/s^2 of body vertical accel
    accel_noise_density: float = 0.002  # m/s^2/sqrt(Hz)
    gyro_noise_density: float = 0.0002  # rad/s/sqrt(Hz)
    accel_bias_std: float = 0.0
    gyro_bias_std: float = 0.0
    mount_roll_deg: float = 10.0
    mount_pitch_deg: float = 10.0
    rate_hz: float = 100.0

    def __post_init__(self):
        if self.speed_mean <= 0:
            raise ValueError("mean speed must be positive")
        if self.rate_hz < 40:
            raise ValueError("simulation rate must be >= 40 Hz")
        if self.route_kind not in ("random", "straight"):
            raise ValueError(f"unknown route kind {self.route_kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown simulation settings: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def car_profile(**overrides) -> SimConfig:
    """Long urban route, 200 Hz sampling, 40 signature segments."""
    base = dict(route_length_m=5919.0, n_segments=40, speed_mean=8.0, rate_hz=200.0,
                stop_prob=0.05, accel_bias_std=0.05, gyro_bias_std=0.005)
    base.update(overrides)
    return SimConfig(**base)


def scooter_profile(**overrides) -> SimConfig:
    """Short mixed-surface route, 420 Hz sampling, 14 signature segments."""
    base = dict(route_length_m=917.0, n_segments=14, speed_mean=5.0, speed_std=0.8,
                rate_hz=420.0, turn_radius_m=(10.0, 40.0), straight_leg_m=(20.0, 120.0),
                accel_bias_std=0.05, gyro_bias_std=0.005)
    base.update(overrides)
    return SimConfig(**base)


def separable_profile(**overrides) -> SimConfig:
    """Texture-dominated signatures and steady cruising: segments are easy to tell apart."""
    base = dict(texture_scale=2.0, roughness_scale=0.1, speed_std=0.3, speed_drive_std=0.02)
    base.update(overrides)
    return SimConfig(**base)


@dataclass(frozen=True)
class SimRoute:
    route: RouteModel  # segmented at the signature count
    signatures: tuple
    curvature: np.ndarray = field(repr=False)  # per polyline edge, 1/m

    def curvature_at(self, s) -> np.ndarray:
        cum = self.route.vertex_arclength
        k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(self.curvature) - 1)
        return self.curvature[k]


# --- route and signatures -------------------------------------------------

def _route_geometry(cfg: SimConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    length = cfg.route_length_m
    if not length >= 2.0:
        raise RouteError(f"route length {length} m is too short")
    if cfg.route_kind == "straight":
        return np.array([[0.0, 0.0], [length, 0.0]]), np.zeros(1)
    if min(cfg.turn_radius_m) < 5.0 or min(cfg.straight_leg_m) <= 0:
        raise RouteError("turn radius must be >= 5 m and straight legs positive")
    legs = []  # (length, curvature)
    total, straight = 0.0, True
    while total < length:
        if straight:
            leg = (rng.uniform(*cfg.straight_leg_m), 0.0)
        else:
            radius = rng.uniform(*cfg.turn_radius_m)
            angle = math.radians(rng.uniform(*cfg.turn_angle_deg))
            leg = (radius * angle, rng.choice([-1.0, 1.0]) / radius)
        leg = (min(leg[0], length - total), leg[1])
        legs.append(leg)
        total += leg[0]
        straight = not straight
    # 1 m steps with midpoint heading; every edge has its nominal length
    pts, kappa = [np.zeros(2)], []
    heading = 0.0
    for leg_len, k in legs:
        n = max(1, math.ceil(leg_len))
        ds = leg_len / n
        for _ in range(n):
            mid = heading + 0.5 * k * ds
            pts.append(pts[-1] + ds * np.array([math.cos(mid), math.sin(mid)]))
            kappa.append(k)
            heading += k * ds
    return np.array(pts), np.array(kappa)


def synth_route(cfg: SimConfig) -> SimRoute:
    """Deterministic route and one signature per segment."""
    rng = np.random.default_rng([cfg.seed, 0])
    polyline, curvature = _route_geometry(cfg, rng)
    route = build_route(polyline, cfg.n_segments)
    seg_len = route.segment_length
    sigs = []
    keys = np.zeros((0, cfg.texture_peaks_per_segment))
    for k in range(cfg.n_segments):
        for _ in range(10_000):
            freqs = np.sort(rng.uniform(*cfg.texture_freq_cpm, cfg.texture_peaks_per_segment))
            key = np.log(freqs)
            # distinct sets: some peak must differ by the separation from every earlier set
            if len(keys) == 0 or np.abs(keys - key).max(axis=1).min() >= cfg.texture_min_separation:
                keys = np.vstack([keys, key])
                break
        else:
            raise RouteError(f"cannot draw {cfg.n_segments} texture sets separated by "
                             f"{cfg.texture_min_separation} in log frequency")
        amps = rng.uniform(*cfg.texture_amplitude, cfg.texture_peaks_per_segment) * cfg.texture_scale
        lo, hi = np.log(cfg.roughness_level)
        level = float(np.exp(rng.uniform(lo, hi))) * cfg.roughness_scale
        start = route.boundaries[k]
        n_bumps = rng.poisson(cfg.bumps_per_segment)
        bumps = tuple(
            (float(start + rng.uniform(0.0, seg_len)), float(rng.uniform(*cfg.bump_amplitude)),
             float(rng.uniform(*cfg.bump_duration_s)))
            for _ in range(n_bumps)
        )
        sigs.append(SegmentSignature(level, tuple(zip(freqs.tolist(), amps.tolist())), bumps))
    return SimRoute(route, tuple(sigs), curvature)


# --- speed profile ----------------------------------------------------------

def _speed_profile(sim: SimRoute, cfg: SimConfig, rng: np.random.Generator):
    """Kinematic knots at KINEMATIC_DT: arc length, speed and (constant) accel per step."""
    length = sim.route.length_m
    cruise = cfg.speed_mean * max(0.2, 1.0 + cfg.speed_drive_std * rng.standard_normal())
    stops = []
    for b in sim.route.boundaries[1:-1]:
        if rng.random() < cfg.stop_prob:
            stops.append([float(b), float(rng.uniform(*cfg.stop_duration_s))])
    stops.append([length, 0.0])
    dt, amax = KINEMATIC_DT, cfg.accel_limit
    alpha = math.exp(-dt / cfg.speed_tau_s)
    ou = 0.0
    s, v = 0.0, 0.0 if cfg.start_from_rest else cruise
    s_knots, v_knots, a_knots = [s], [v], []
    if cfg.start_from_rest:
        for _ in range(int(round(cfg.initial_rest_s / dt))):
            s_knots.append(0.0), v_knots.append(0.0), a_knots.append(0.0)
    hold = 0.0
    while True:
        ou = alpha * ou + math.sqrt(1 - alpha**2) * cfg.speed_std * rng.standard_normal()
        s_stop = stops[0][0]
        holding = hold > 0
        if holding:
            a = 0.0
            hold -= dt
            if hold <= 1e-9:
                stops.pop(0)
        else:
            # never faster than the speed from which the next stop is reachable
            target = min(max(0.3 * cruise, cruise + ou), math.sqrt(2 * amax * max(s_stop - s, 0.0)))
            a = min(max((target - v) / dt, -amax), amax)
        v_new = max(0.0, v + a * dt)
        a = (v_new - v) / dt
        s = min(s + v * dt + 0.5 * a * dt * dt, s_stop)
        v = v_new
        if not holding and s_stop - s < 0.05 and v < 0.5:
            # snap onto the stop point
            a += -v / dt
            s, v = s_stop, 0.0
            if len(stops) == 1:
                s_knots.append(s), v_knots.append(v), a_knots.append(a)
                break
            hold = stops[0][1]
        s_knots.append(s)
        v_knots.append(v)
        a_knots.append(a)
    return np.array(s_knots), np.array(v_knots), np.array(a_knots)


def _kinematics_at(t, s_knots, v_knots, a_knots):
    dt = KINEMATIC_DT
    k = np.minimum((t / dt).astype(int), len(a_knots) - 1)
    tau = t - k * dt
    a = a_knots[k]
    v = np.maximum(v_knots[k] + a * tau, 0.0)
    s = s_knots[k] + v_knots[k] * tau + 0.5 * a * tau * tau
    end = t >= len(a_knots) * dt
    s = np.where(end, s_knots[-1], np.minimum(s, s_knots[-1]))
    v = np.where(end, 0.0, v)
    a = np.where(end, 0.0, a)
    return s, v, a


# --- excitation -------------------------------------------------------------

def _roughness_profile(sim: SimRoute, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Second spatial derivative of a road profile with Gd(n) ~ n^-2 (per unit Gd)."""
    length = sim.route.length_m
    n = int(math.ceil(length / ROUGHNESS_DS)) + 2
    freqs = np.fft.rfftfreq(n, ROUGHNESS_DS)
    band = (freqs >= ROUGHNESS_BAND[0]) & (freqs <= ROUGHNESS_BAND[1])
    dn = freqs[1] - freqs[0]
    # displacement PSD (one-sided) Gd(n0) (n/n0)^-2, differentiated twice in space
    psd = np.zeros_like(freqs)
    psd[band] = (ROUGHNESS_N0 / freqs[band]) ** 2 * (2 * np.pi * freqs[band]) ** 4
    amp = np.sqrt(psd * dn / 2) * n
    spec = amp * np.exp(2j * np.pi * rng.random(len(freqs)))
    curv = np.fft.irfft(spec, n)
    s_grid = np.arange(n) * ROUGHNESS_DS
    seg = np.clip(np.searchsorted(sim.route.boundaries, s_grid, side="right"), 1, len(sim.signatures))
    level = np.array([sig.roughness_psd_level for sig in sim.signatures])[seg - 1]
    return s_grid, curv * np.sqrt(level)


def _texture(sim: SimRoute, s: np.ndarray) -> np.ndarray:
    seg = np.clip(np.searchsorted(sim.route.boundaries, s, side="right"), 1, len(sim.signatures))
    out = np.zeros_like(s)
    for k, sig in enumerate(sim.signatures, start=1):
        mask = seg == k
        if not mask.any():
            continue
        sk = s[mask]
        acc = np.zeros_like(sk)
        for j, (freq, amp) in enumerate(sig.texture_peaks):
            # fixed phase per (segment, peak) keeps the road identical across drives
            phase = (0.618033988749895 * (7 * k + j)) % 1.0 * 2 * np.pi
            acc += amp * np.sin(2 * np.pi * freq * sk + phase)
        out[mask] = acc
    return out


def _bumps(sim: SimRoute, t: np.ndarray, s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    for sig in sim.signatures:
        for pos, amp, dur in sig.bump_events:
            hit = np.searchsorted(s, pos, side="left")
            if hit >= len(s) or s[hit] < pos:
                continue
            t0 = t[hit]
            win = (t >= t0) & (t <= t0 + dur)
            out[win] += amp * np.sin(np.pi * (t[win] - t0) / dur)
    return out


def _rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def mount_rotation(roll: float, pitch: float) -> np.ndarray:
    """Sensor-to-vehicle rotation for a mount tilted by ``roll`` and ``pitch`` (rad)."""
    return _rot_y(pitch) @ _rot_x(roll)


def synth_drive(sim: SimRoute, cfg: SimConfig, drive_seed, name: str = "") -> Drive:
    """One drive from the start to the end of the route, with 1 Hz ground truth."""
    rng = np.random.default_rng(drive_seed)
    s_k, v_k, a_k = _speed_profile(sim, cfg, rng)
    duration = math.ceil(len(a_k) * KINEMATIC_DT - 1e-9)
    f = cfg.rate_hz
    n = int(round(duration * f))
    t = np.arange(n) / f
    s, v, a_lon = _kinematics_at(t, s_k, v_k, a_k)

    s_grid, rough = _roughness_profile(sim, rng)
    excitation = v**2 * np.interp(s, s_grid, rough) + _texture(sim, s) + _bumps(sim, t, s)
    wn = 2 * np.pi * cfg.suspension_hz
    z = cfg.suspension_damping
    # body accel / base accel of a base-excited mass-spring-damper
    b, a = sps.bilinear([2 * z * wn, wn * wn], [1.0, 2 * z * wn, wn * wn], fs=f)
    body_z = sps.lfilter(b, a, excitation)

    kappa = sim.curvature_at(s)
    yaw_rate = v * kappa
    # body pitch follows vertical motion; rotate the level-frame signals into the pitched body
    pitch_rate = cfg.pitch_coupling * body_z
    theta = np.concatenate([[0.0], np.cumsum(0.5 * (pitch_rate[1:] + pitch_rate[:-1]) / f)])
    c, sn = np.cos(theta), np.sin(theta)
    fx, fz = a_lon, body_z + GRAVITY
    acc_v = np.stack([c * fx - sn * fz, v * v * kappa, sn * fx + c * fz], axis=1)
    gyro_v = np.stack([-sn * yaw_rate, pitch_rate, c * yaw_rate], axis=1)

    roll = math.radians(rng.uniform(-cfg.mount_roll_deg, cfg.mount_roll_deg))
    pitch = math.radians(rng.uniform(-cfg.mount_pitch_deg, cfg.mount_pitch_deg))
    rot = mount_rotation(roll, pitch)
    acc_s = acc_v @ rot  # row-vector form of rot.T @ f
    gyro_s = gyro_v @ rot

    acc_s += rng.normal(0.0, cfg.accel_bias_std, 3) if cfg.accel_bias_std else 0.0
    gyro_s += rng.normal(0.0, cfg.gyro_bias_std, 3) if cfg.gyro_bias_std else 0.0
    acc_s += rng.standard_normal((n, 3)) * (cfg.accel_noise_density * math.sqrt(f))
    gyro_s += rng.standard_normal((n, 3)) * (cfg.gyro_noise_density * math.sqrt(f))

    gt_t = np.arange(duration + 1, dtype=float)
    gt_s, _, _ = _kinematics_at(gt_t, s_k, v_k, a_k)
    gt_xy = sim.route.point_at(gt_s)
    drive = Drive(t, np.hstack([acc_s, gyro_s]), f, gt_t, gt_xy, name=name)
    object.__setattr__(drive, "meta", {"mount_roll": roll, "mount_pitch": pitch, "arc_length": gt_s})
    return drive


SPLIT_CODES = {"train": 1, "val": 2, "test": 3}


def drive_seed(cfg: SimConfig, split: str, index: int) -> list:
    return [cfg.seed, SPLIT_CODES[split], index]


def synth_dataset(cfg: SimConfig, n_train: int, n_val: int, n_test: int,
                  sim: Optional[SimRoute] = None) -> Dataset:
    for count in (n_train, n_val, n_test):
        if count < 1:
            raise ValueError("every split needs at least one drive")
    sim = sim or synth_route(cfg)
    splits = {}
    for split, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        splits[split] = [
            synth_drive(sim, cfg, drive_seed(cfg, split, i), name=f"{split}_{i:03d}")
            for i in range(count)
        ]
    return Dataset(route=sim.route, **splits)


# --- persistence ------------------------------------------------------------

def write_dataset(ds: Dataset, cfg: SimConfig, out_dir) -> Path:
    """Drive/ground-truth CSVs, the route polyline and a manifest for regeneration."""
    out = Path(out_dir)
    (out / "drives").mkdir(parents=True, exist_ok=True)
    write_route_csv(ds.route.polyline, out / "route.csv")
    splits = {}
    for split in ("train", "val", "test"):
        entries = []
        for i, drive in enumerate(ds.split(split)):
            imu = f"drives/{drive.name}.csv"
            gt = f"drives/{drive.name}_gt.csv"
            write_drive_csv(drive, out / imu, out / gt)
            entries.append({"name": drive.name, "imu": imu, "ground_truth": gt,
                            "seed": drive_seed(cfg, split, i), "rate_hz": drive.rate_hz})
        splits[split] = entries
    manifest = {
        "format": "roadsig-dataset",
        "version": SIM_MANIFEST_VERSION,
        "route": "route.csv",
        "signature_segments": cfg.n_segments,
        "sim_config": cfg.to_dict(),
        "splits": splits,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / "manifest.json"


def with_overrides(cfg: SimConfig, **kw) -> SimConfig:
    return replace(cfg, **kw)
