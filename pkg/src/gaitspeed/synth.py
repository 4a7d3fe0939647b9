"""Synthetic wrist-IMU treadmill sessions.

Cadence follows a two-plateau model: nearly flat while walking, a jump at the
walk/run transition, nearly flat again while running. Within an activity the
speed shows up in the swing amplitude (a stand-in for step length), scaled by
a per-participant gain the network has to see past. Every constant lives in
:class:`GaitModelParams`; none of them are measured values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .imu import (ACCEL_RANGE_G, DEFAULT_RATE_HZ, GYRO_RANGE_DPS, ManifestEntry, Session,
                  session_filename, write_manifest, write_session)

SPEED_RANGE_MPH = (3.0, 7.0)
DEFAULT_SPEEDS = tuple(3.0 + 0.5 * i for i in range(9))


@dataclass(frozen=True)
class GaitModelParams:
    walk_swing_hz: float = 0.9          # arm-swing fundamental; steps are twice this
    run_swing_hz: float = 1.35
    transition_mph: float = 4.5
    swing_hz_per_mph: float = 0.02      # residual cadence drift inside a plateau
    harmonics: tuple[float, float] = (0.3, 0.15)
    accel_base_g: float = 0.10
    accel_g_per_mph: float = 0.08
    gyro_base_dps: float = 20.0
    gyro_dps_per_mph: float = 25.0
    accel_axis_weights: tuple[float, float, float] = (1.0, 0.6, 0.4)
    gyro_axis_weights: tuple[float, float, float] = (0.5, 1.0, 0.3)
    gravity_g: float = 1.0
    wobble_hz: float = 0.15
    wobble_deg: float = 8.0
    accel_noise_g: float = 0.02
    gyro_noise_dps: float = 3.0
    posture_noise_per_mph: float = 0.25  # noise grows by this fraction per mph above 3
    session_gain_jitter: float = 0.02

    def __post_init__(self):
        if not self.run_swing_hz > self.walk_swing_hz:
            raise ValueError("run plateau must be above walk plateau")
        if not 3.0 <= self.transition_mph <= 7.0:
            raise ValueError("transition speed must lie in [3, 7] mph")

    def swing_hz(self, speed_mph: float) -> float:
        if speed_mph < self.transition_mph:
            return self.walk_swing_hz + self.swing_hz_per_mph * (speed_mph - SPEED_RANGE_MPH[0])
        return self.run_swing_hz + self.swing_hz_per_mph * (speed_mph - self.transition_mph)


@dataclass(frozen=True)
class ParticipantProfile:
    participant_id: str
    cadence_offset_hz: float = 0.0
    gain: float = 1.0
    phases: tuple[float, ...] = (0.0,) * 6
    gravity_dir: tuple[float, float, float] = (0.0, 0.0, 1.0)
    posture_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("amplitude gain must be positive")

    def swing_hz(self, gait: GaitModelParams, speed_mph: float) -> float:
        return gait.swing_hz(speed_mph) + self.cadence_offset_hz

    def step_frequency_hz(self, gait: GaitModelParams, speed_mph: float) -> float:
        return 2.0 * self.swing_hz(gait, speed_mph)


def random_profile(participant_id: str, rng: np.random.Generator) -> ParticipantProfile:
    # wrist mounting: gravity mostly along +z, tilted by up to ~35 degrees
    tilt = rng.uniform(0.0, math.radians(35.0))
    azim = rng.uniform(0.0, 2 * math.pi)
    gdir = (math.sin(tilt) * math.cos(azim), math.sin(tilt) * math.sin(azim), math.cos(tilt))
    return ParticipantProfile(
        participant_id=participant_id,
        cadence_offset_hz=float(rng.uniform(-0.04, 0.04)),
        gain=float(rng.uniform(0.88, 1.12)),
        phases=tuple(float(p) for p in rng.uniform(0.0, 2 * math.pi, 6)),
        gravity_dir=gdir,
        posture_noise=float(rng.uniform(0.5, 1.5)),
        seed=int(rng.integers(2**31)),
    )


def _rotate(v: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of fixed vector ``v`` about ``axis`` by each of ``angle``."""
    c, s = np.cos(angle)[:, None], np.sin(angle)[:, None]
    return v * c + np.cross(axis, v) * s + axis * (axis @ v) * (1 - c)


def _swing(theta: np.ndarray, harmonics: Sequence[float], wave=np.sin) -> np.ndarray:
    out = wave(theta)
    for k, h in enumerate(harmonics, start=2):
        out = out + h * wave(k * theta + 0.5 * k)
    return out


def generate_session(profile: ParticipantProfile, gait: GaitModelParams = GaitModelParams(),
                     speed_mph: float = 3.0, duration_s: float = 45.0,
                     rate_hz: float = DEFAULT_RATE_HZ, seed: int | None = None) -> Session:
    """One fixed-speed session; ``seed`` drives the session's phase, wobble and noise."""
    lo, hi = SPEED_RANGE_MPH
    if not lo <= speed_mph <= hi:
        raise ValueError(f"speed {speed_mph} mph outside [{lo}, {hi}]")
    if duration_s < 10:
        raise ValueError("duration must be at least 10 s")
    rng = np.random.default_rng(profile.seed if seed is None else seed)
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz

    f = profile.swing_hz(gait, speed_mph)
    theta = 2 * math.pi * f * t + rng.uniform(0, 2 * math.pi)
    jitter = 1.0 + gait.session_gain_jitter * rng.standard_normal()
    amp_a = profile.gain * jitter * (gait.accel_base_g + gait.accel_g_per_mph * speed_mph)
    amp_g = profile.gain * jitter * (gait.gyro_base_dps + gait.gyro_dps_per_mph * speed_mph)

    acc = np.empty((n, 3))
    gyr = np.empty((n, 3))
    for j in range(3):
        acc[:, j] = amp_a * gait.accel_axis_weights[j] * _swing(theta + profile.phases[j], gait.harmonics)
        gyr[:, j] = amp_g * gait.gyro_axis_weights[j] * _swing(theta + profile.phases[3 + j],
                                                                gait.harmonics, np.cos)

    if gait.gravity_g:
        axis = np.array([1.0, 0.0, 0.0])
        wobble = math.radians(gait.wobble_deg) * np.sin(
            2 * math.pi * gait.wobble_hz * t + rng.uniform(0, 2 * math.pi))
        acc += gait.gravity_g * _rotate(np.asarray(profile.gravity_dir), axis, wobble)

    posture = profile.posture_noise * (1.0 + gait.posture_noise_per_mph * (speed_mph - lo))
    acc += gait.accel_noise_g * posture * rng.standard_normal((n, 3))
    gyr += gait.gyro_noise_dps * posture * rng.standard_normal((n, 3))
    data = np.hstack([np.clip(acc, -ACCEL_RANGE_G, ACCEL_RANGE_G),
                      np.clip(gyr, -GYRO_RANGE_DPS, GYRO_RANGE_DPS)])
    return Session(profile.participant_id, float(speed_mph), float(rate_hz), t, data)


def participant_ids(n: int) -> list[str]:
    width = max(2, len(str(n)))
    return [f"P{i + 1:0{width}d}" for i in range(n)]


def generate_sessions(n_participants: int, speeds: Sequence[float] = DEFAULT_SPEEDS,
                      master_seed: int = 0, gait: GaitModelParams = GaitModelParams(),
                      duration_s: float = 45.0, rate_hz: float = DEFAULT_RATE_HZ):
    """Deterministic in-memory dataset: ``(profiles, sessions)``."""
    if n_participants < 1:
        raise ValueError("need at least one participant")
    profiles, sessions = [], []
    for pid, ss in zip(participant_ids(n_participants),
                       np.random.SeedSequence(master_seed).spawn(n_participants)):
        prof_ss, sess_ss = ss.spawn(2)
        prof = random_profile(pid, np.random.default_rng(prof_ss))
        profiles.append(prof)
        for speed, s_ss in zip(speeds, sess_ss.spawn(len(speeds))):
            seed = int(s_ss.generate_state(1)[0])
            sess = generate_session(prof, gait, float(speed), duration_s, rate_hz, seed=seed)
            # quantise to 1e-6 like a logged sensor stream; keeps files compact
            sessions.append(replace(sess, t=np.round(sess.t, 6), data=np.round(sess.data, 6)))
    return profiles, sessions


def generate_dataset(out_dir, n_participants: int = 15, speeds: Sequence[float] = DEFAULT_SPEEDS,
                     master_seed: int = 0, gait: GaitModelParams = GaitModelParams(),
                     duration_s: float = 45.0, rate_hz: float = DEFAULT_RATE_HZ) -> Path:
    """Write session CSVs plus ``manifest.csv`` into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, sessions = generate_sessions(n_participants, speeds, master_seed, gait, duration_s, rate_hz)
    entries = []
    for s in sessions:
        path = out / session_filename(s.participant_id, s.speed_mph)
        write_session(s, path)
        entries.append(ManifestEntry(path, s.speed_mph, s.participant_id))
    manifest = out / "manifest.csv"
    write_manifest(entries, manifest)
    return manifest
