"""Regression metrics, the 70/15/15 window split and leave-one-participant-out CV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .windowing import WindowedDataset


class MetricError(ValueError):
    pass


def _pair(truth, pred):
    t = np.asarray(truth, dtype=np.float64).ravel()
    p = np.asarray(pred, dtype=np.float64).ravel()
    if t.shape != p.shape:
        raise MetricError(f"length mismatch: {t.size} truth vs {p.size} predictions")
    if t.size == 0:
        raise MetricError("empty input")
    return t, p


def mae(truth, pred) -> float:
    t, p = _pair(truth, pred)
    return float(np.abs(t - p).mean())


def mape(truth, pred) -> float:
    """Mean of ``|S - S_hat| / S`` in percent; the true speed is the denominator."""
    t, p = _pair(truth, pred)
    if np.any(t <= 0):
        raise MetricError("MAPE needs strictly positive true values")
    return float(100.0 * np.mean(np.abs(t - p) / t))


def r2(truth, pred) -> float:
    t, p = _pair(truth, pred)
    if t.size < 2:
        raise MetricError("R^2 needs at least two pairs")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0:
        raise MetricError("R^2 undefined: true values have zero variance")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


def r2_pred_mean(truth, pred) -> float:
    """Variant whose denominator is the spread of the *predictions* about their mean."""
    t, p = _pair(truth, pred)
    ss = float(np.sum((p - p.mean()) ** 2))
    if t.size < 2 or ss == 0:
        raise MetricError("prediction-mean R^2 undefined: predictions have zero variance")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss


@dataclass
class EvalReport:
    mae: float
    mape: float
    r2: float | None
    pairs: list[tuple[float, float]]
    per_speed: dict[float, dict] = field(default_factory=dict)
    r2_pred_mean: float | None = None

    def to_dict(self, include_pairs: bool = False) -> dict:
        d = {"n": len(self.pairs), "mae": self.mae, "mape": self.mape, "r2": self.r2,
             "per_speed": {f"{k:g}": v for k, v in sorted(self.per_speed.items())}}
        if self.r2_pred_mean is not None:
            d["r2_pred_mean"] = self.r2_pred_mean
        if include_pairs:
            d["pairs"] = [list(p) for p in self.pairs]
        return d


def evaluate(truth, pred, pred_mean_r2: bool = False) -> EvalReport:
    t, p = _pair(truth, pred)
    try:
        r_sq = r2(t, p)
    except MetricError:
        r_sq = None
    per_speed = {}
    for s in np.unique(t):
        sel = t == s
        per_speed[float(s)] = {"n": int(sel.sum()), "mae": mae(t[sel], p[sel]),
                               "mape": mape(t[sel], p[sel]), "mean_pred": float(p[sel].mean())}
    report = EvalReport(mae(t, p), mape(t, p), r_sq, list(zip(t.tolist(), p.tolist())), per_speed)
    if pred_mean_r2:
        try:
            report.r2_pred_mean = r2_pred_mean(t, p)
        except MetricError:
            pass
    return report


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError("need three positive split fractions")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(self.fractions)}")


def split_indices(n: int, spec: SplitSpec = SplitSpec()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffle ``range(n)`` and cut into (train, test, evaluation); remainders go to train."""
    if n < 3:
        raise ValueError(f"need at least 3 windows to split, got {n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_test = math.floor(n * spec.fractions[1])
    n_eval = math.floor(n * spec.fractions[2])
    n_train = n - n_test - n_eval
    return perm[:n_train], perm[n_train:n_train + n_test], perm[n_train + n_test:]


def split_70_15_15(dataset: WindowedDataset, spec: SplitSpec = SplitSpec()):
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    return tuple(dataset.subset(i) for i in split_indices(len(dataset), spec))


# Trainer contract: (training windows, fold seed) -> predictor mapping windows to mph.
Trainer = Callable[[WindowedDataset, int], Callable[[np.ndarray], np.ndarray]]


@dataclass
class LopoResult:
    folds: list[tuple[str, EvalReport]]
    aggregate: dict
    pooled: EvalReport | None = None

    def to_dict(self) -> dict:
        d = {"n_folds": len(self.folds), "aggregate": self.aggregate,
             "folds": [{"participant": p, **r.to_dict()} for p, r in self.folds]}
        if self.pooled is not None:
            d["pooled"] = self.pooled.to_dict()
        return d

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return [pair for _, r in self.folds for pair in r.pairs]


def lopo_folds(dataset: WindowedDataset):
    """Yield ``(participant, train_idx, test_idx)`` for each distinct participant."""
    ids = dataset.participant_ids
    if len(ids) < 2:
        raise ValueError("leave-one-participant-out needs at least 2 participants")
    for pid in ids:
        held = dataset.participants == pid
        yield pid, np.flatnonzero(~held), np.flatnonzero(held)


def fold_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def leave_one_participant_out(dataset: WindowedDataset, trainer: Trainer, seed: int = 0,
                              pooled: bool = False,
                              on_fold: Callable[[str, EvalReport], None] | None = None) -> LopoResult:
    """Train on all but one participant, evaluate on the held-out one, for every participant.

    The aggregate is the mean of the per-fold metrics; ``pooled`` also
    reports metrics over every held-out prediction at once.
    """
    folds = list(lopo_folds(dataset))
    results = []
    for (pid, tr, te), fseed in zip(folds, fold_seeds(seed, len(folds))):
        predictor = trainer(dataset.subset(tr), fseed)
        held = dataset.subset(te)
        rep = evaluate(held.labels, predictor(held.data))
        results.append((pid, rep))
        if on_fold is not None:
            on_fold(pid, rep)
    r2s = [r.r2 for _, r in results if r.r2 is not None]
    aggregate = {"mae": float(np.mean([r.mae for _, r in results])),
                 "mape": float(np.mean([r.mape for _, r in results])),
                 "r2": float(np.mean(r2s)) if r2s else None}
    pooled_rep = None
    if pooled:
        allp = [pair for _, r in results for pair in r.pairs]
        pooled_rep = evaluate([a for a, _ in allp], [b for _, b in allp])
    return LopoResult(results, aggregate, pooled_rep)


def scatter_export(pairs, path) -> None:
    """Write ``true,predicted`` rows for plotting."""
    if isinstance(pairs, EvalReport):
        pairs = pairs.pairs
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no prediction pairs to export")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("true,predicted\n")
        for t, p in pairs:
            fh.write(f"{float(t)!r},{float(p)!r}\n")


def read_scatter(path) -> list[tuple[float, float]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(float(a), float(b)) for a, b in reader]
