"""Synthetic USV sensor logs with a known wave direction.

The hull follows a heading plan at cruise speed. Wave-induced motion uses a
linear response surrogate driven by the encounter angle
``chi = wrap(yaw - wave_direction)``::

    roll  = A_r * s * |sin chi| * sin(phase + phi_r)
    pitch = A_p * s * |cos chi| * sin(phase + phi_p)
    heave = amplitude * sin(phase)

where ``s = amplitude / REFERENCE_AMPLITUDE`` and ``phase`` integrates the
encounter frequency ``w_e = w - (w**2 / g) * U * cos(chi)``. Accelerometer,
gyro and magnetometer readings are derived from these signals in a
north-east-down frame, then independent Gaussian noise is added per sensor
group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datapipe import LogMeta, RawRecord, write_csv, write_metadata
from .metrics import wrap_angle
from .numerics import SeededRng

G = 9.81
ROLL_GAIN = 0.15  # rad, A_r
PITCH_GAIN = 0.08  # rad, A_p
ROLL_PHASE = 0.0
PITCH_PHASE = math.pi / 4
REFERENCE_AMPLITUDE = 0.075  # m; the gains above are the response at this amplitude
MAG_INCLINATION = math.radians(60.0)
BASE_ALTITUDE = 10.0


@dataclass(frozen=True)
class WaveComponent:
    direction: float  # compass radians, propagation direction
    period: float
    amplitude: float

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError(f"wave period must be > 0, got {self.period}")
        if self.amplitude < 0:
            raise ValueError(f"wave amplitude must be >= 0, got {self.amplitude}")


@dataclass(frozen=True)
class WaveField:
    direction: float
    period: float
    amplitude: float
    secondary: tuple = ()

    def components(self):
        yield WaveComponent(self.direction, self.period, self.amplitude)
        for d, p, a in self.secondary:
            yield WaveComponent(d, p, a)


@dataclass(frozen=True)
class TrajectoryPlan:
    """Heading schedule: legs of ``leg_duration`` seconds at successive headings.

    ``lawnmower`` alternates ``headings[0]`` and its reciprocal, ``flower``
    rotates by ``180 + 360 / petals`` degrees per leg, and ``fixed_heading``
    holds ``headings[0]``. An explicit ``headings`` list with more than one
    entry is used as given. ``lead_in`` seconds of stationary drift precede
    the cruise.
    """

    kind: str = "fixed_heading"
    headings: tuple = (0.0,)
    leg_duration: float = 30.0
    cruise_speed: float = 0.5
    turn_rate: float = 0.5
    petals: int = 6
    lead_in: float = 0.0
    ramp: float = 2.0

    def __post_init__(self):
        if self.cruise_speed <= 0:
            raise ValueError("cruise speed must be > 0")
        if self.kind not in ("lawnmower", "flower", "fixed_heading"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")

    def leg_heading(self, j: int) -> float:
        h0 = self.headings[0]
        if len(self.headings) > 1:
            return self.headings[j % len(self.headings)]
        if self.kind == "lawnmower":
            return h0 + (math.pi if j % 2 else 0.0)
        if self.kind == "flower":
            return h0 + j * (math.pi + 2 * math.pi / self.petals)
        return h0


DEFAULT_NOISE = {
    "accel": 0.05,
    "gyro": 0.005,
    "mag": 0.01,
    "vel": 0.02,
    "alt": 0.02,
    "euler": 0.002,
    "heave": 0.005,
}


@dataclass(frozen=True)
class SimConfig:
    sample_rate: float = 36.0
    duration: float = 120.0
    noise: dict = field(default_factory=lambda: dict(DEFAULT_NOISE))
    seed: int = 0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        if any(v < 0 for v in self.noise.values()):
            raise ValueError("noise standard deviations must be >= 0")


def _heading_profile(plan: TrajectoryPlan, t: np.ndarray, dt: float):
    """Unwrapped heading and its rate, turning at most ``turn_rate`` toward each leg."""
    psi = np.empty(t.size)
    rate = np.zeros(t.size)
    current = plan.leg_heading(0)
    max_step = plan.turn_rate * dt
    for k, tk in enumerate(t):
        cruise_t = tk - plan.lead_in
        if cruise_t > 0:
            target = plan.leg_heading(int(cruise_t // plan.leg_duration))
            err = wrap_angle(target - current)
            step = max(-max_step, min(max_step, err))
            current = current + step
            rate[k] = step / dt
        psi[k] = current
    return psi, rate


def _speed_profile(plan: TrajectoryPlan, t: np.ndarray):
    x = (t - plan.lead_in) / plan.ramp if plan.ramp > 0 else np.where(t >= plan.lead_in, np.inf, -np.inf)
    frac = np.clip(x, 0.0, 1.0)
    accel = np.where((x > 0) & (x < 1), plan.cruise_speed / max(plan.ramp, 1e-12), 0.0)
    return plan.cruise_speed * frac, accel


def _rotation(yaw, pitch, roll):
    """Body-to-NED rotation matrices, yaw-pitch-roll order, shape (N, 3, 3)."""
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    R = np.empty(yaw.shape + (3, 3))
    R[:, 0, 0] = cy * cp
    R[:, 0, 1] = cy * sp * sr - sy * cr
    R[:, 0, 2] = cy * sp * cr + sy * sr
    R[:, 1, 0] = sy * cp
    R[:, 1, 1] = sy * sp * sr + cy * cr
    R[:, 1, 2] = sy * sp * cr - cy * sr
    R[:, 2, 0] = -sp
    R[:, 2, 1] = cp * sr
    R[:, 2, 2] = cp * cr
    return R


def euler_to_quaternion(yaw, pitch, roll):
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    w = cr * cp * cy + sr * sp * sy
    x = sr * cp * cy - cr * sp * sy
    y = cr * sp * cy + sr * cp * sy
    z = cr * cp * sy - sr * sp * cy
    q = np.stack([w, x, y, z], axis=-1)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


@dataclass
class SimResult:
    records: list
    truth: np.ndarray
    signals: dict  # noise-free channels, for inspection and tests


def simulate(wave: WaveField, plan: TrajectoryPlan, cfg: SimConfig, rng: SeededRng | None = None) -> SimResult:
    """Generate one log. ``truth[i] == wrap(records[i].yaw - wave.direction)``."""
    rng = SeededRng(cfg.seed) if rng is None else rng
    dt = 1.0 / cfg.sample_rate
    n = int(round(cfg.duration * cfg.sample_rate))
    t = np.arange(n) * dt
    psi, psi_rate = _heading_profile(plan, t, dt)
    speed, speed_dot = _speed_profile(plan, t)

    roll = np.zeros(n)
    pitch = np.zeros(n)
    roll_rate = np.zeros(n)
    pitch_rate = np.zeros(n)
    heave = np.zeros(n)
    heave_vel = np.zeros(n)
    heave_acc = np.zeros(n)
    primary_we = None
    for comp in wave.components():
        w = 2 * math.pi / comp.period
        chi = psi - comp.direction
        we = w - (w * w / G) * speed * np.cos(chi)
        phase = np.concatenate([[0.0], np.cumsum(0.5 * (we[1:] + we[:-1]) * dt)])
        scale = comp.amplitude / REFERENCE_AMPLITUDE
        ar = ROLL_GAIN * scale * np.abs(np.sin(chi))
        ap = PITCH_GAIN * scale * np.abs(np.cos(chi))
        roll += ar * np.sin(phase + ROLL_PHASE)
        pitch += ap * np.sin(phase + PITCH_PHASE)
        roll_rate += ar * we * np.cos(phase + ROLL_PHASE)
        pitch_rate += ap * we * np.cos(phase + PITCH_PHASE)
        heave += comp.amplitude * np.sin(phase)
        heave_vel += comp.amplitude * we * np.cos(phase)
        heave_acc += -comp.amplitude * we * we * np.sin(phase)
        if primary_we is None:
            primary_we = we

    noise = cfg.noise

    def nrm(label, shape, group=None):
        return rng.fork(label).normal(shape, 0.0, noise.get(group or label, 0.0))

    # body rates from Euler rates (ZYX)
    gyro = np.column_stack([
        roll_rate - psi_rate * np.sin(pitch),
        pitch_rate * np.cos(roll) + psi_rate * np.sin(roll) * np.cos(pitch),
        -pitch_rate * np.sin(roll) + psi_rate * np.cos(roll) * np.cos(pitch),
    ])
    vel_n = np.column_stack([speed * np.cos(psi), speed * np.sin(psi), -heave_vel])
    acc_n = np.column_stack([
        speed_dot * np.cos(psi) - speed * np.sin(psi) * psi_rate,
        speed_dot * np.sin(psi) + speed * np.cos(psi) * psi_rate,
        -heave_acc,
    ])
    R = _rotation(psi, pitch, roll)
    Rt = np.transpose(R, (0, 2, 1))
    accel = np.einsum("nij,nj->ni", Rt, acc_n - np.array([0.0, 0.0, G]))
    mag_n = np.array([math.cos(MAG_INCLINATION), 0.0, math.sin(MAG_INCLINATION)])
    mag = np.einsum("nij,j->ni", Rt, mag_n)

    eul = nrm("euler", (n, 3))
    yaw_m = wrap_angle(psi + eul[:, 0])
    roll_m = wrap_angle(roll + eul[:, 1])
    pitch_m = wrap_angle(pitch + eul[:, 2])
    quat = euler_to_quaternion(yaw_m, pitch_m, roll_m)
    accel_m = accel + nrm("accel", (n, 3))
    gyro_m = gyro + nrm("gyro", (n, 3))
    mag_m = mag + nrm("mag", (n, 3))
    vel_m = vel_n + nrm("vel", (n, 3))
    alt_m = BASE_ALTITUDE + heave + nrm("alt", n)
    heave_m = heave + nrm("heave", n)
    heave_acc_m = heave_acc + nrm("heave_accel", n, group="accel")
    heave_period = 2 * math.pi / np.abs(primary_we)

    cols = np.column_stack([
        t, accel_m, gyro_m, mag_m, vel_m, alt_m, yaw_m, roll_m, pitch_m, quat, heave_period, heave_m, heave_acc_m,
    ])
    records = [RawRecord(*row, valid=True) for row in cols.tolist()]
    truth = wrap_angle(np.array([r.yaw for r in records]) - wave.direction)
    signals = {"t": t, "psi": psi, "roll": roll, "pitch": pitch, "heave": heave, "speed": speed,
               "encounter_freq": primary_we}
    return SimResult(records, np.atleast_1d(truth), signals)


@dataclass
class Scenario:
    logs: dict  # id -> list[RawRecord]
    truth: dict  # id -> per-record relative direction
    metadata: list  # LogMeta

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "logs").mkdir(parents=True, exist_ok=True)
        for lid, recs in self.logs.items():
            write_csv(out / "logs" / f"{lid}.csv", recs)
        write_metadata(out / "metadata.csv", self.metadata)
        return out


POOL_WAVE_DIRECTION_DEG = 270.0
SEA_WAVE_DIRECTION_DEG = 335.0


def make_pool_scenario(seed: int = 0, n_trajectories: int = 10, duration: float = 120.0,
                       sample_rate: float = 36.0) -> Scenario:
    """Wave-tank preset: fixed wave direction, lawnmower runs at ten base headings.

    Heights alternate over 10-20 cm (amplitude half the height) and periods
    over 2.0 and 2.5 s. Geometry depends only on the preset; ``seed`` only
    changes the sensor noise.
    """
    direction = math.radians(POOL_WAVE_DIRECTION_DEG)
    root = SeededRng(seed)
    logs, truth, meta = {}, {}, []
    for k in range(n_trajectories):
        height = 0.10 + 0.10 * (k % 5) / 4
        wave = WaveField(direction, 2.0 if k % 2 == 0 else 2.5, height / 2)
        plan = TrajectoryPlan(kind="lawnmower", headings=(math.radians(18.0 * k),), leg_duration=27.5,
                              cruise_speed=0.5, turn_rate=0.6, lead_in=5.0)
        cfg = SimConfig(sample_rate=sample_rate, duration=duration, seed=seed)
        lid = f"pool{k:02d}"
        res = simulate(wave, plan, cfg, root.fork(lid))
        logs[lid], truth[lid] = res.records, res.truth
        meta.append(LogMeta(lid, POOL_WAVE_DIRECTION_DEG, sample_rate))
    return Scenario(logs, truth, meta)


SEA_DURATIONS_MIN = (6.0, 9.0, 14.0, 7.5, 11.0, 12.5)


def make_sea_scenario(seed: int = 0, sample_rate: float = 36.0, durations_min=SEA_DURATIONS_MIN) -> Scenario:
    """Open-sea preset: six flower-pattern transects under a three-component sea."""
    direction = math.radians(SEA_WAVE_DIRECTION_DEG)
    wave = WaveField(direction, 4.0, 0.30, secondary=(
        (math.radians(300.0), 6.0, 0.12),
        (math.radians(20.0), 3.0, 0.06),
    ))
    noise = {k: 3.0 * v for k, v in DEFAULT_NOISE.items()}
    root = SeededRng(seed)
    logs, truth, meta = {}, {}, []
    for k, minutes in enumerate(durations_min):
        plan = TrajectoryPlan(kind="flower", headings=(math.radians(40.0 * k),), leg_duration=40.0,
                              cruise_speed=1.5, turn_rate=0.4, petals=6, lead_in=10.0)
        cfg = SimConfig(sample_rate=sample_rate, duration=minutes * 60.0, noise=noise, seed=seed)
        lid = f"sea{k:02d}"
        res = simulate(wave, plan, cfg, root.fork(lid))
        logs[lid], truth[lid] = res.records, res.truth
        meta.append(LogMeta(lid, SEA_WAVE_DIRECTION_DEG, sample_rate))
    return Scenario(logs, truth, meta)


def with_noise(cfg: SimConfig, **overrides) -> SimConfig:
    noise = dict(cfg.noise)
    noise.update(overrides)
    return replace(cfg, noise=noise)
