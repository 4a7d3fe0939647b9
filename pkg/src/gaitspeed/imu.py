"""Session data model, CSV ingestion, calibration and edge trimming."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

HEADER = ("t", "ax", "ay", "az", "gx", "gy", "gz")
DEFAULT_RATE_HZ = 51.0
ACCEL_RANGE_G = 2.0
GYRO_RANGE_DPS = 1000.0
# effective session length after cleansing
CLEAN_SECONDS = 40.0


class SessionError(ValueError):
    pass


class EmptyFile(SessionError):
    pass


class MalformedRow(SessionError):
    def __init__(self, path, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.line = line


class NonMonotonicTime(SessionError):
    pass


class TooShort(SessionError):
    pass


class SingularCalibration(SessionError):
    pass


class ImuSample(NamedTuple):
    t: float
    ax: float
    ay: float
    az: float
    gx: float
    gy: float
    gz: float


@dataclass(frozen=True)
class Session:
    """One fixed-speed recording.

    ``t`` holds seconds since session start and ``data`` is ``[T, 6]`` with
    columns ax, ay, az (g) then gx, gy, gz (deg/s).
    """

    participant_id: str
    speed_mph: float
    sample_rate_hz: float
    t: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        if not self.speed_mph > 0:
            raise SessionError(f"speed_mph must be positive, got {self.speed_mph}")
        if not self.sample_rate_hz > 0:
            raise SessionError("sample_rate_hz must be positive")
        if self.data.ndim != 2 or self.data.shape[1] != 6 or len(self.t) != len(self.data):
            raise SessionError(f"bad session arrays: t{self.t.shape} data{self.data.shape}")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise NonMonotonicTime("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration_s(self) -> float:
        return len(self.t) / self.sample_rate_hz

    @property
    def accel(self) -> np.ndarray:
        return self.data[:, :3]

    @property
    def gyro(self) -> np.ndarray:
        return self.data[:, 3:]

    @property
    def samples(self) -> Iterator[ImuSample]:
        for ti, row in zip(self.t, self.data):
            yield ImuSample(float(ti), *map(float, row))


def check_ranges(session: Session) -> None:
    """Raise if any value is non-finite or outside the sensor ranges."""
    if not (np.all(np.isfinite(session.t)) and np.all(np.isfinite(session.data))):
        raise SessionError("non-finite sample values")
    if np.abs(session.accel).max(initial=0.0) > ACCEL_RANGE_G:
        raise SessionError(f"acceleration outside +/-{ACCEL_RANGE_G} g")
    if np.abs(session.gyro).max(initial=0.0) > GYRO_RANGE_DPS:
        raise SessionError(f"angular velocity outside +/-{GYRO_RANGE_DPS} deg/s")


def parse_session(path, participant_id: str, speed_mph: float,
                  sample_rate_hz: float = DEFAULT_RATE_HZ) -> Session:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path}: empty file")
        if tuple(h.strip() for h in header) != HEADER:
            raise MalformedRow(path, 1, f"expected header {','.join(HEADER)}")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 7:
                raise MalformedRow(path, line, f"expected 7 fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise MalformedRow(path, line, "non-numeric field") from None
            if not all(math.isfinite(v) for v in vals):
                raise MalformedRow(path, line, "non-finite field")
            if rows and vals[0] <= rows[-1][0]:
                raise NonMonotonicTime(f"{path}:{line}: timestamp {vals[0]} not increasing")
            rows.append(vals)
    if not rows:
        raise EmptyFile(f"{path}: no samples")
    arr = np.array(rows, dtype=np.float64)
    return Session(participant_id, float(speed_mph), float(sample_rate_hz), arr[:, 0], arr[:, 1:])


def write_session(session: Session, path) -> None:
    # repr() gives the shortest string that parses back to the same double
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(HEADER) + "\n")
        for ti, row in zip(session.t.tolist(), session.data.tolist()):
            fh.write(",".join(repr(v) for v in [ti, *row]) + "\n")


@dataclass(frozen=True)
class CalibrationParams:
    """Per-sensor affine correction ``c = M @ (r - b)``; identity by default."""

    accel_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    gyro_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_matrix: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        for name in ("accel_offset", "gyro_offset"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if v.shape != (3,):
                raise ValueError(f"{name} must have shape (3,)")
            object.__setattr__(self, name, v)
        for name in ("accel_matrix", "gyro_matrix"):
            m = np.asarray(getattr(self, name), dtype=np.float64)
            if m.shape != (3, 3):
                raise ValueError(f"{name} must have shape (3, 3)")
            object.__setattr__(self, name, m)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationParams":
        acc, gyr = d.get("accel", {}), d.get("gyro", {})
        return cls(
            accel_offset=acc.get("offset", np.zeros(3)),
            accel_matrix=acc.get("matrix", np.eye(3)),
            gyro_offset=gyr.get("offset", np.zeros(3)),
            gyro_matrix=gyr.get("matrix", np.eye(3)),
        )


def _check_invertible(m: np.ndarray, name: str) -> None:
    if not np.isfinite(np.linalg.cond(m)) or np.linalg.cond(m) > 1e12:
        raise SingularCalibration(f"{name} calibration matrix is singular")


def apply_calibration(session: Session, calib: CalibrationParams) -> Session:
    _check_invertible(calib.accel_matrix, "accel")
    _check_invertible(calib.gyro_matrix, "gyro")
    acc = (session.accel - calib.accel_offset) @ calib.accel_matrix.T
    gyr = (session.gyro - calib.gyro_offset) @ calib.gyro_matrix.T
    return replace(session, data=np.hstack([acc, gyr]))


def trim_session(session: Session, trim_seconds: float = 2.5) -> Session:
    """Drop ``floor(trim_seconds * rate)`` samples from each end.

    The result is then clipped to ``floor(n - 2 * trim_seconds * rate)``
    samples so a 45 s session lands on exactly 40 s. Timestamps restart at
    zero on the nominal sample grid.
    """
    if trim_seconds < 0:
        raise ValueError("trim_seconds must be non-negative")
    n = len(session)
    rate = session.sample_rate_hz
    if trim_seconds == 0:
        return session
    if session.duration_s <= 2 * trim_seconds:
        raise TooShort(f"session of {session.duration_s:.2f} s cannot lose 2 x {trim_seconds} s")
    cut = int(math.floor(trim_seconds * rate))
    keep = min(n - 2 * cut, int(math.floor(n - 2 * trim_seconds * rate + 1e-9)))
    data = session.data[cut:cut + keep].copy()
    t = np.arange(keep) / rate
    return replace(session, t=t, data=data)


def clean_session(session: Session, calib: CalibrationParams | None = None,
                  trim_seconds: float = 2.5) -> Session:
    if calib is not None:
        session = apply_calibration(session, calib)
    return trim_session(session, trim_seconds)


# -- manifests ---------------------------------------------------------------

MANIFEST_HEADER = ("path", "speed_mph", "participant_id")


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    speed_mph: float
    participant_id: str


def read_manifest(path) -> list[ManifestEntry]:
    """Read a dataset manifest; relative session paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise SessionError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRow(path, reader.line_num, "expected path,speed_mph,participant_id")
            p = Path(row[0])
            try:
                speed = float(row[1])
            except ValueError:
                raise MalformedRow(path, reader.line_num, "non-numeric speed") from None
            entries.append(ManifestEntry(p if p.is_absolute() else base / p, speed, row[2]))
    return entries


def write_manifest(entries, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(MANIFEST_HEADER) + "\n")
        for e in entries:
            p = Path(e.path)
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            fh.write(f"{p.as_posix()},{e.speed_mph!r},{e.participant_id}\n")


def load_sessions(manifest_path, sample_rate_hz: float = DEFAULT_RATE_HZ) -> list[Session]:
    return [parse_session(e.path, e.participant_id, e.speed_mph, sample_rate_hz)
            for e in read_manifest(manifest_path)]


def session_filename(participant_id: str, speed_mph: float) -> str:
    return f"{participant_id}_{speed_mph:.1f}mph.csv"
