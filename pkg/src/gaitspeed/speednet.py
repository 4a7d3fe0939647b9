"""Dual-branch CNN speed regressor: build, forward/backward, train, search, persist.

Each window ``[F, 6]`` is split into its accelerometer (columns 0-2) and
gyroscope (columns 3-5) halves. Each half is a one-channel ``F x 3`` image
that runs through its own stack of 3x3 conv + ReLU layers and a global max
pool. The two pooled vectors are concatenated (accel first) and fed through
ReLU dense layers with dropout to a single linear output in mph.
"""

from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .windowing import WindowedDataset

MAGIC = b"GSN1"
FORMAT_VERSION = 1
BRANCHES = ("accel", "gyro")

CONV_LAYERS_RANGE = (2, 10)
FILTERS_RANGE = (10, 100)
DENSE_LAYERS_RANGE = (2, 5)
NEURONS_RANGE = (15, 500)


class OutOfRange(ValueError):
    pass


class ModelFileError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class ArchSpec:
    conv_filters: tuple[int, ...] = (27, 45)
    dense_units: tuple[int, ...] = (180, 30)
    dropout: float = 0.2
    frame_size: int = 153

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        object.__setattr__(self, "dense_units", tuple(int(u) for u in self.dense_units))

    def check_ranges(self) -> None:
        def within(v, lo_hi, what):
            if not lo_hi[0] <= v <= lo_hi[1]:
                raise OutOfRange(f"{what} {v} outside [{lo_hi[0]}, {lo_hi[1]}]")

        within(len(self.conv_filters), CONV_LAYERS_RANGE, "conv layer count")
        for f in self.conv_filters:
            within(f, FILTERS_RANGE, "filter count")
        within(len(self.dense_units), DENSE_LAYERS_RANGE, "dense layer count")
        for u in self.dense_units:
            within(u, NEURONS_RANGE, "neuron count")
        if not 0 <= self.dropout < 1:
            raise OutOfRange(f"dropout {self.dropout} outside [0, 1)")

    @property
    def concat_size(self) -> int:
        return 2 * self.conv_filters[-1]

    def to_dict(self) -> dict:
        return {"conv_filters": list(self.conv_filters), "dense_units": list(self.dense_units),
                "dropout": self.dropout, "frame_size": self.frame_size}


def param_shapes(arch: ArchSpec) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in the fixed serialization order."""
    shapes = {}
    for br in BRANCHES:
        c_in = 1
        for i, k in enumerate(arch.conv_filters):
            shapes[f"{br}.conv{i}.w"] = (k, c_in, 3, 3)
            shapes[f"{br}.conv{i}.b"] = (k,)
            c_in = k
    n_in = arch.concat_size
    for i, u in enumerate(arch.dense_units):
        shapes[f"dense{i}.w"] = (u, n_in)
        shapes[f"dense{i}.b"] = (u,)
        n_in = u
    shapes["out.w"] = (1, n_in)
    shapes["out.b"] = (1,)
    return shapes


@dataclass
class SpeedNetParams:
    arch: ArchSpec
    weights: dict[str, np.ndarray]
    # fixed per-channel input standardisation; not trained
    input_mean: np.ndarray = field(default_factory=lambda: np.zeros(6))
    input_scale: np.ndarray = field(default_factory=lambda: np.ones(6))

    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights.values())

    def copy(self) -> "SpeedNetParams":
        return copy.deepcopy(self)

    def conv(self, branch: str) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.weights[f"{branch}.conv{i}.w"], self.weights[f"{branch}.conv{i}.b"])
                for i in range(len(self.arch.conv_filters))]

    def dense(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.weights[f"dense{i}.w"], self.weights[f"dense{i}.b"])
                for i in range(len(self.arch.dense_units))]


def build_model(arch: ArchSpec = ArchSpec(), seed: int = 0, check_ranges: bool = True) -> SpeedNetParams:
    """Fan-in uniform weights and zero biases.

    The accel branch, gyro branch and dense head draw from independent child
    streams of ``seed``.
    """
    if check_ranges:
        arch.check_ranges()
    streams = dict(zip((*BRANCHES, "head"),
                       (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))))
    weights = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith(".b"):
            weights[name] = np.zeros(shape)
            continue
        rng = streams[name.split(".")[0]] if name.startswith(BRANCHES) else streams["head"]
        fan_in = int(np.prod(shape[1:]))
        weights[name] = nn.fan_in_uniform(rng, shape, fan_in)
    return SpeedNetParams(arch, weights)


def fit_normalization(params: SpeedNetParams, data: np.ndarray) -> SpeedNetParams:
    """Set the per-channel input standardisation from training windows ``[n, F, 6]``."""
    flat = np.asarray(data, dtype=np.float64).reshape(-1, data.shape[-1])
    std = flat.std(axis=0)
    params.input_mean = flat.mean(axis=0)
    params.input_scale = np.where(std > 1e-12, std, 1.0)
    return params


# -- forward / backward --------------------------------------------------------

def _check_batch(params: SpeedNetParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    f = params.arch.frame_size
    if x.ndim != 3 or x.shape[1:] != (f, 6):
        raise ValueError(f"expected windows of shape [n, {f}, 6], got {list(x.shape)}")
    return x


def forward_batch(params: SpeedNetParams, x: np.ndarray, training: bool = False,
                  rng: np.random.Generator | None = None, dropout: float | None = None):
    """Predict mph for windows ``x`` ``[B, F, 6]``; returns ``(pred [B], cache)``."""
    x = _check_batch(params, x)
    rate = params.arch.dropout if dropout is None else dropout
    xn = (x - params.input_mean) / params.input_scale
    cache = {"branches": {}, "dense": []}
    pooled = []
    for br, cols in zip(BRANCHES, (slice(0, 3), slice(3, 6))):
        h = np.ascontiguousarray(xn[:, :, cols])[..., None]
        layers = []
        for w, b in params.conv(br):
            z, im = nn.conv_forward(h, w, b)
            layers.append((h.shape, im, z))
            h = nn.relu(z)
        p, idx = nn.gmp_forward(h)
        cache["branches"][br] = (layers, idx, h.shape)
        pooled.append(p)
    h = np.concatenate(pooled, axis=1)
    for w, b in params.dense():
        z = nn.dense_forward(h, w, b)
        a = nn.relu(z)
        mask = None
        if training and rate > 0:
            mask = nn.dropout_mask(a.shape, rate, rng)
            a = a * mask
        cache["dense"].append((h, z, mask))
        h = a
    cache["head_in"] = h
    out = nn.dense_forward(h, params.weights["out.w"], params.weights["out.b"])
    return out[:, 0], cache


def backward_batch(params: SpeedNetParams, cache: dict, dpred: np.ndarray,
                   need_input_grad: bool = False) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given ``dloss/dpred``; keys match ``params.weights``."""
    grads = {}
    w = params.weights
    dh, grads["out.w"], grads["out.b"] = nn.dense_backward(dpred[:, None], cache["head_in"], w["out.w"])
    for i in reversed(range(len(params.arch.dense_units))):
        h_in, z, mask = cache["dense"][i]
        if mask is not None:
            dh = dh * mask
        dz = nn.relu_backward(dh, z)
        dh, grads[f"dense{i}.w"], grads[f"dense{i}.b"] = nn.dense_backward(dz, h_in, w[f"dense{i}.w"])
    k = params.arch.conv_filters[-1]
    dpooled = {"accel": dh[:, :k], "gyro": dh[:, k:]}
    dinputs = []
    for br in BRANCHES:
        layers, idx, last_shape = cache["branches"][br]
        dcur = nn.gmp_backward(dpooled[br], idx, last_shape)
        for i in reversed(range(len(layers))):
            x_shape, im, z = layers[i]
            dz = nn.relu_backward(dcur, z)
            dcur, grads[f"{br}.conv{i}.w"], grads[f"{br}.conv{i}.b"] = nn.conv_backward(
                dz, im, x_shape, w[f"{br}.conv{i}.w"], need_dx=(i > 0 or need_input_grad))
        if need_input_grad:
            dinputs.append(dcur[..., 0])
    if need_input_grad:
        grads["input"] = np.concatenate(dinputs, axis=2) / params.input_scale
    return grads


def forward(params: SpeedNetParams, window: np.ndarray, training: bool = False,
            rng: np.random.Generator | None = None) -> float:
    """Speed in mph for one ``[F, 6]`` window."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (params.arch.frame_size, 6):
        raise ValueError(f"expected window shape [{params.arch.frame_size}, 6], got {list(window.shape)}")
    pred, _ = forward_batch(params, window[None], training=training, rng=rng)
    return float(pred[0])


def predict(params: SpeedNetParams, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    x = _check_batch(params, x)
    out = [forward_batch(params, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def loss_and_grads(params: SpeedNetParams, x: np.ndarray, y: np.ndarray, training: bool = False,
                   rng: np.random.Generator | None = None, dropout: float | None = None):
    pred, cache = forward_batch(params, x, training=training, rng=rng, dropout=dropout)
    loss, dpred = nn.mae_loss(pred, y)
    return loss, backward_batch(params, cache, dpred), pred


# -- training ------------------------------------------------------------------

@dataclass
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 10
    batch_size: int = 32
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    dropout: float | None = None    # None: use the architecture's rate
    seed: int = 0
    monitor: str = "val"            # early stopping on "val" or "train" MAE

    def __post_init__(self):
        if self.patience < 1 or self.max_epochs < self.patience:
            raise ValueError("need patience >= 1 and max_epochs >= patience")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.monitor not in ("val", "train"):
            raise ValueError("monitor must be 'val' or 'train'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mae: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _as_xy(ds) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(ds, WindowedDataset):
        return ds.data, ds.labels
    x, y = ds
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)


def train(params: SpeedNetParams, train_set, validation_set, config: TrainConfig = TrainConfig(),
          on_epoch: Callable[[EpochRecord], None] | None = None):
    """Mini-batch RMSprop on MAE with early stopping.

    ``train_set`` / ``validation_set`` are :class:`WindowedDataset` or
    ``(x, y)`` pairs. Returns a copy of the parameters from the best
    monitored epoch together with the per-epoch history. The input
    parameters are not modified. ``monitor="train"`` watches the
    end-of-epoch training MAE in inference mode, not the running loss
    stored in the history.
    """
    x_tr, y_tr = _as_xy(train_set)
    x_va, y_va = _as_xy(validation_set)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation sets must be non-empty")
    _check_batch(params, x_tr)
    _check_batch(params, x_va)

    model = params.copy()
    rng = np.random.default_rng(config.seed)
    opt = nn.RMSprop(config.lr, config.rho, config.eps)
    monitor = nn.EarlyStopMonitor(config.patience, config.max_epochs)
    best = model.copy()
    history: list[EpochRecord] = []
    n = len(x_tr)
    while True:
        order = rng.permutation(n)
        abs_err = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, _ = loss_and_grads(model, x_tr[idx], y_tr[idx], training=True,
                                            rng=rng, dropout=config.dropout)
            if not math.isfinite(loss):
                raise TrainingDiverged(monitor.epoch + 1, loss)
            abs_err += loss * len(idx)
            opt.step(model.weights, grads)
        train_mae = abs_err / n
        val_mae = float(np.mean(np.abs(predict(model, x_va) - y_va)))
        if not math.isfinite(val_mae):
            raise TrainingDiverged(monitor.epoch + 1, val_mae)
        if config.monitor == "val":
            watched = val_mae
        else:
            # the running loss predates the epoch's updates; score the weights we would keep
            watched = float(np.mean(np.abs(predict(model, x_tr) - y_tr)))
        stop = monitor.update(watched)
        rec = EpochRecord(monitor.epoch, train_mae, val_mae)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if monitor.improved:
            best = model.copy()
        if stop:
            break
    return best, history


# -- hyperparameter search -----------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    conv_layers: tuple[int, int] = CONV_LAYERS_RANGE
    filters: tuple[int, int] = FILTERS_RANGE
    dense_layers: tuple[int, int] = DENSE_LAYERS_RANGE
    neurons: tuple[int, int] = NEURONS_RANGE
    dropout: float = 0.2
    frame_size: int = 153

    def sample(self, rng: np.random.Generator) -> ArchSpec:
        def draw(lo_hi):
            return int(rng.integers(lo_hi[0], lo_hi[1] + 1))

        convs = tuple(draw(self.filters) for _ in range(draw(self.conv_layers)))
        dense = tuple(draw(self.neurons) for _ in range(draw(self.dense_layers)))
        return ArchSpec(convs, dense, self.dropout, self.frame_size)


SEARCH_BUDGET = TrainConfig(max_epochs=100, patience=5)


@dataclass
class SearchResult:
    best_arch: ArchSpec
    best_score: float
    leaderboard: list[tuple[ArchSpec, float]]

    def to_dict(self) -> dict:
        return {"best_arch": self.best_arch.to_dict(), "best_val_mae": self.best_score,
                "leaderboard": [{"arch": a.to_dict(), "val_mae": s} for a, s in self.leaderboard]}


def candidate_seeds(seed: int, k: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def sample_architectures(space: SearchSpace, k: int, seed: int) -> list[ArchSpec]:
    rng = np.random.default_rng(seed)
    return [space.sample(rng) for _ in range(k)]


def random_search(space: SearchSpace, train_set, validation_set, k: int = 50, seed: int = 0,
                  budget: TrainConfig = SEARCH_BUDGET,
                  on_candidate: Callable[[int, ArchSpec, float], None] | None = None) -> SearchResult:
    """Sample ``k`` architectures uniformly from ``space`` and keep the best by validation MAE."""
    if k < 1:
        raise ValueError("k must be at least 1")
    x_tr, _ = _as_xy(train_set)
    archs = sample_architectures(space, k, seed)
    board = []
    for i, (arch, cseed) in enumerate(zip(archs, candidate_seeds(seed, k))):
        model = fit_normalization(build_model(arch, cseed, check_ranges=False), x_tr)
        _, hist = train(model, train_set, validation_set, replace(budget, seed=cseed))
        score = min(r.val_mae for r in hist)
        board.append((arch, score))
        if on_candidate is not None:
            on_candidate(i, arch, score)
    best_arch, best_score = min(board, key=lambda t: t[1])
    return SearchResult(best_arch, best_score, board)


# -- model file ----------------------------------------------------------------
# Layout (little-endian): b"GSN1", u32 version, u32 frame_size, u32 n_conv,
# u32 filters[n_conv], u32 n_dense, u32 units[n_dense], f32 dropout,
# f32 input_mean[6], f32 input_scale[6], then every parameter as f32 in
# param_shapes() order (accel convs, gyro convs, dense layers, output).

def model_to_bytes(params: SpeedNetParams) -> bytes:
    a = params.arch
    parts = [MAGIC, struct.pack("<3I", FORMAT_VERSION, a.frame_size, len(a.conv_filters)),
             struct.pack(f"<{len(a.conv_filters)}I", *a.conv_filters),
             struct.pack("<I", len(a.dense_units)),
             struct.pack(f"<{len(a.dense_units)}I", *a.dense_units),
             struct.pack("<f", a.dropout),
             np.asarray(params.input_mean, dtype="<f4").tobytes(),
             np.asarray(params.input_scale, dtype="<f4").tobytes()]
    for name in param_shapes(a):
        parts.append(np.asarray(params.weights[name], dtype="<f4").tobytes())
    return b"".join(parts)


def model_from_bytes(buf: bytes) -> SpeedNetParams:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ModelFileError("truncated model file")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model file version {version}")
    frame, n_conv = take("<2I")
    convs = take(f"<{n_conv}I")
    (n_dense,) = take("<I")
    dense = take(f"<{n_dense}I")
    (rate,) = take("<f")
    mean = np.array(take("<6f"), dtype=np.float64)
    scale = np.array(take("<6f"), dtype=np.float64)
    arch = ArchSpec(convs, dense, round(rate, 6), frame)
    weights = {}
    for name, shape in param_shapes(arch).items():
        count = int(np.prod(shape))
        if pos + 4 * count > len(buf):
            raise ModelFileError("truncated model file")
        weights[name] = np.frombuffer(buf, "<f4", count, pos).astype(np.float64).reshape(shape)
        pos += 4 * count
    if pos != len(buf):
        raise ModelFileError(f"{len(buf) - pos} trailing bytes in model file")
    return SpeedNetParams(arch, weights, mean, scale)


def save_model(params: SpeedNetParams, path) -> None:
    Path(path).write_bytes(model_to_bytes(params))


def load_model(path) -> SpeedNetParams:
    return model_from_bytes(Path(path).read_bytes())


def parameter_count(arch: ArchSpec) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(arch).values())
