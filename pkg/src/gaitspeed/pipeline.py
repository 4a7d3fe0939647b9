"""Glue used by the CLI: manifest -> cleaned sessions -> windows -> trained model."""

from __future__ import annotations

from dataclasses import replace
from typing import Callable

import numpy as np

from . import speednet
from .evaluation import EvalReport, SplitSpec, evaluate, split_70_15_15
from .imu import CalibrationParams, DEFAULT_RATE_HZ, check_ranges, clean_session, load_sessions
from .windowing import FRAME_SIZE, OVERLAP, WindowedDataset, segment_dataset


def load_dataset(manifest, trim_seconds: float = 2.5, calib: CalibrationParams | None = None,
                 frame_size: int = FRAME_SIZE, overlap: float = OVERLAP, mode: str = "per_session",
                 sample_rate_hz: float = DEFAULT_RATE_HZ):
    sessions = [clean_session(s, calib, trim_seconds) for s in load_sessions(manifest, sample_rate_hz)]
    for s in sessions:
        check_ranges(s)
    return sessions, segment_dataset(sessions, frame_size, overlap, mode)


def train_model(train_set: WindowedDataset, val_set: WindowedDataset, arch: speednet.ArchSpec,
                config: speednet.TrainConfig, on_epoch=None, check_ranges: bool = True):
    """Build a model seeded from ``config.seed``, standardise on ``train_set`` and train it."""
    model = speednet.build_model(arch, config.seed, check_ranges=check_ranges)
    speednet.fit_normalization(model, train_set.data)
    return speednet.train(model, train_set, val_set, config, on_epoch=on_epoch)


def run_split(dataset: WindowedDataset, arch: speednet.ArchSpec, config: speednet.TrainConfig,
              split: SplitSpec, on_epoch=None, pred_mean_r2: bool = False):
    """70/15/15 strategy: train, early-stop on test, report on evaluation."""
    tr, te, ev = split_70_15_15(dataset, split)
    model, history = train_model(tr, te, arch, config, on_epoch)
    report = evaluate(ev.labels, speednet.predict(model, ev.data), pred_mean_r2=pred_mean_r2)
    return model, history, report, (tr, te, ev)


def cnn_trainer(arch: speednet.ArchSpec, config: speednet.TrainConfig, val_fraction: float = 0.15,
                on_epoch: Callable | None = None):
    """LOPO trainer: carve a validation slice out of the training participants' windows."""

    def fit(train_set: WindowedDataset, seed: int):
        n = len(train_set)
        perm = np.random.default_rng(seed).permutation(n)
        n_val = max(1, int(np.floor(n * val_fraction)))
        model, _ = train_model(train_set.subset(perm[n_val:]), train_set.subset(perm[:n_val]),
                               arch, replace(config, seed=seed), on_epoch)
        return lambda x: speednet.predict(model, x)

    return fit


def evaluate_model(model: speednet.SpeedNetParams, dataset: WindowedDataset,
                   pred_mean_r2: bool = False) -> EvalReport:
    return evaluate(dataset.labels, speednet.predict(model, dataset.data), pred_mean_r2=pred_mean_r2)
