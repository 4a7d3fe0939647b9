"""Fixed-length overlapping windows over multi-channel streams."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .imu import Session

FRAME_SIZE = 153
OVERLAP = 0.5
MAGIC = b"GSW1"


class WindowingError(ValueError):
    pass


def _stride(frame_size: int, overlap: float) -> Fraction:
    if not 0 <= overlap < 1:
        raise WindowingError(f"overlap must be in [0, 1), got {overlap}")
    if frame_size < 1:
        raise WindowingError("frame_size must be positive")
    # exact rational stride so 153 * 0.5 = 76.5 is not subject to rounding
    return Fraction(frame_size) * (1 - Fraction(overlap).limit_denominator(10**6))


def window_count(length: int, frame_size: int = FRAME_SIZE, overlap: float = OVERLAP) -> int:
    """Number of windows: ``floor((T - F) / (F * (1 - ov))) + 1``."""
    if length < frame_size:
        return 0
    return math.floor((length - frame_size) / _stride(frame_size, overlap)) + 1


def window_starts(length: int, frame_size: int = FRAME_SIZE, overlap: float = OVERLAP) -> np.ndarray:
    stride = _stride(frame_size, overlap)
    n = window_count(length, frame_size, overlap)
    return (np.arange(n, dtype=np.int64) * stride.numerator) // stride.denominator


def segment(stream: np.ndarray, frame_size: int = FRAME_SIZE, overlap: float = OVERLAP) -> np.ndarray:
    """Cut ``stream`` ([T, C]) into windows ``[n, frame_size, C]``.

    Window ``i`` starts at ``floor(i * F * (1 - ov))``; trailing samples that
    do not fill a frame are dropped.
    """
    stream = np.asarray(stream)
    if stream.ndim == 1:
        stream = stream[:, None]
    if len(stream) < frame_size:
        raise WindowingError(f"stream of {len(stream)} samples is shorter than one frame ({frame_size})")
    starts = window_starts(len(stream), frame_size, overlap)
    return stream[starts[:, None] + np.arange(frame_size)]


@dataclass
class WindowedDataset:
    data: np.ndarray            # [n, F, C]
    labels: np.ndarray          # [n] mph
    participants: np.ndarray    # [n] participant id per window (str)
    session_index: np.ndarray   # [n] source session index
    frame_size: int = FRAME_SIZE
    overlap: float = OVERLAP

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.participants = np.asarray(self.participants, dtype=object)
        self.session_index = np.asarray(self.session_index, dtype=np.int64)
        n = len(self.data)
        if not (len(self.labels) == len(self.participants) == len(self.session_index) == n):
            raise WindowingError("dataset fields have inconsistent lengths")
        if self.data.ndim != 3:
            raise WindowingError(f"data must be [n, F, C], got {self.data.shape}")

    def __len__(self) -> int:
        return len(self.data)

    def subset(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx)
        return WindowedDataset(self.data[idx], self.labels[idx], self.participants[idx],
                               self.session_index[idx], self.frame_size, self.overlap)

    @property
    def participant_ids(self) -> list[str]:
        """Distinct participants in first-appearance order."""
        return list(dict.fromkeys(self.participants.tolist()))


def segment_dataset(sessions: Sequence[Session], frame_size: int = FRAME_SIZE,
                    overlap: float = OVERLAP, mode: str = "per_session") -> WindowedDataset:
    """Window a list of sessions.

    ``per_session`` windows each session on its own. ``concatenated`` stacks
    every session into one stream first (this is how 205 x 2040 samples give
    5465 windows); a window that crosses a session boundary takes the label of
    the session holding its first sample.
    """
    if not sessions:
        raise WindowingError("no sessions to segment")
    rates = {s.sample_rate_hz for s in sessions}
    if len(rates) > 1:
        raise WindowingError(f"mixed sample rates: {sorted(rates)}")
    mode = mode.replace("-", "_")
    if mode == "per_session":
        chunks, labels, pids, sidx = [], [], [], []
        for i, s in enumerate(sessions):
            if len(s) < frame_size:
                raise WindowingError(f"session {i} ({s.participant_id}) shorter than one frame")
            w = segment(s.data, frame_size, overlap)
            chunks.append(w)
            labels.append(np.full(len(w), s.speed_mph))
            pids.extend([s.participant_id] * len(w))
            sidx.append(np.full(len(w), i))
        return WindowedDataset(np.concatenate(chunks), np.concatenate(labels), pids,
                               np.concatenate(sidx), frame_size, overlap)
    if mode == "concatenated":
        stream = np.concatenate([s.data for s in sessions])
        bounds = np.cumsum([len(s) for s in sessions])
        starts = window_starts(len(stream), frame_size, overlap)
        if len(starts) == 0:
            raise WindowingError("stacked stream shorter than one frame")
        owner = np.searchsorted(bounds, starts, side="right")
        data = stream[starts[:, None] + np.arange(frame_size)]
        labels = np.array([sessions[k].speed_mph for k in owner])
        pids = [sessions[k].participant_id for k in owner]
        return WindowedDataset(data, labels, pids, owner, frame_size, overlap)
    raise WindowingError(f"unknown mode {mode!r}")


# -- binary tensor file ------------------------------------------------------
# Layout (little-endian): b"GSW1", u32 n, u32 F, u32 C, f32 data[n*F*C],
# f32 labels[n], u32 n_ids, n_ids x (u32 len, utf-8 bytes),
# n x (u32 participant index, u32 session index).

def save_windows(ds: WindowedDataset, path) -> None:
    n, f, c = ds.data.shape
    ids = ds.participant_ids
    lookup = {p: i for i, p in enumerate(ids)}
    with Path(path).open("wb") as fh:
        fh.write(MAGIC + struct.pack("<3I", n, f, c))
        fh.write(ds.data.astype("<f4").tobytes())
        fh.write(ds.labels.astype("<f4").tobytes())
        fh.write(struct.pack("<I", len(ids)))
        for p in ids:
            raw = str(p).encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
        prov = np.stack([np.array([lookup[p] for p in ds.participants], dtype="<u4"),
                         ds.session_index.astype("<u4")], axis=1)
        fh.write(prov.tobytes())


def load_windows(path, overlap: float = OVERLAP) -> WindowedDataset:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise WindowingError(f"{path}: not a window file (bad magic)")

    pos = 4

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(buf):
            raise WindowingError(f"{path}: truncated window file")
        chunk = buf[pos:pos + nbytes]
        pos += nbytes
        return chunk

    n, f, c = struct.unpack("<3I", take(12))
    data = np.frombuffer(take(4 * n * f * c), dtype="<f4").reshape(n, f, c)
    labels = np.frombuffer(take(4 * n), dtype="<f4")
    (n_ids,) = struct.unpack("<I", take(4))
    ids = []
    for _ in range(n_ids):
        (ln,) = struct.unpack("<I", take(4))
        ids.append(take(ln).decode("utf-8"))
    prov = np.frombuffer(take(8 * n), dtype="<u4").reshape(n, 2)
    pids = [ids[i] for i in prov[:, 0]]
    return WindowedDataset(data.astype(np.float64), labels.astype(np.float64), pids,
                           prov[:, 1].astype(np.int64), f, overlap)
