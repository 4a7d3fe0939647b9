"""Numpy layer toolkit with hand-written backward passes.

Feature maps travel through the network channel-last (``[B, H, W, C]``) so
that a 3x3 "same" convolution is a single matrix product over an im2col
buffer. The public ``conv2d_forward`` / ``global_max_pool`` helpers accept the
channel-first layout (``[C, H, W]`` or ``[B, C, H, W]``) and convert.

All reductions run in a fixed order, so a forward/backward pass is
bit-reproducible for a given input and BLAS thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KERNEL = 3


# -- convolution -------------------------------------------------------------

def im2col(x: np.ndarray) -> np.ndarray:
    """``[B, H, W, C]`` -> ``[B*H*W, 9*C]`` patches of the zero-padded input.

    Column order is (ki, kj, c), i.e. :func:`weight_matrix` layout.
    """
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((b, h, w, KERNEL, KERNEL, c))
    for i in range(KERNEL):
        for j in range(KERNEL):
            cols[:, :, :, i, j, :] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(b * h * w, KERNEL * KERNEL * c)


def weight_matrix(weight: np.ndarray) -> np.ndarray:
    """``[K, C, 3, 3]`` filters -> ``[K, 9*C]`` rows matching :func:`im2col`."""
    return weight.transpose(0, 2, 3, 1).reshape(weight.shape[0], -1)


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Channel-last 3x3 convolution, stride 1, zero padding 1.

    ``weight`` is ``[K, C, 3, 3]``. Returns ``(out [B, H, W, K], cols)``; the
    im2col buffer is needed again for the backward pass.
    """
    b, h, w, c = x.shape
    k = weight.shape[0]
    if weight.shape[1] != c:
        raise ValueError(f"channel mismatch: input has {c}, filters expect {weight.shape[1]}")
    cols = im2col(x)
    out = cols @ weight_matrix(weight).T
    out += bias
    return out.reshape(b, h, w, k), cols


def conv_backward(dout: np.ndarray, cols: np.ndarray, x_shape, weight: np.ndarray,
                  need_dx: bool = True):
    b, h, w, c = x_shape
    k = weight.shape[0]
    d = dout.reshape(-1, k)
    dw = (d.T @ cols).reshape(k, KERNEL, KERNEL, c).transpose(0, 3, 1, 2)
    db = d.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d @ weight_matrix(weight)).reshape(b, h, w, KERNEL, KERNEL, c)
    dxp = np.zeros((b, h + 2, w + 2, c))
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Channel-first convenience wrapper: ``[C, H, W]`` or ``[B, C, H, W]`` in and out."""
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.shape[1] != weight.shape[1]:
        raise ValueError(f"channel mismatch: input has {xb.shape[1]}, filters expect {weight.shape[1]}")
    out, _ = conv_forward(np.ascontiguousarray(xb.transpose(0, 2, 3, 1)), weight, bias)
    out = out.transpose(0, 3, 1, 2)
    return out[0] if single else out


def conv2d_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray):
    """Gradients ``(dx, dweight, dbias)`` for :func:`conv2d_forward` (channel-first)."""
    single = x.ndim == 3
    xb = x[None] if single else x
    db_ = dout[None] if single else dout
    xl = np.ascontiguousarray(xb.transpose(0, 2, 3, 1))
    dx, dw, dbias = conv_backward(np.ascontiguousarray(db_.transpose(0, 2, 3, 1)),
                                  im2col(xl), xl.shape, weight)
    dx = dx.transpose(0, 3, 1, 2)
    return (dx[0] if single else dx), dw, dbias


# -- activations and pooling -------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at 0 is 0
    return dout * (x > 0)


def gmp_forward(x: np.ndarray):
    """Global max pool over the spatial axes of ``[B, H, W, K]`` -> ``[B, K]``.

    Returns the pooled values and the flat argmax (first occurrence on ties).
    """
    b, h, w, k = x.shape
    flat = x.reshape(b, h * w, k)
    idx = flat.argmax(axis=1)
    return np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :], idx


def gmp_backward(dout: np.ndarray, idx: np.ndarray, x_shape) -> np.ndarray:
    b, h, w, k = x_shape
    dx = np.zeros((b, h * w, k))
    np.put_along_axis(dx, idx[:, None, :], dout[:, None, :], axis=1)
    return dx.reshape(x_shape)


def global_max_pool(x: np.ndarray) -> np.ndarray:
    """Channel-first wrapper: ``[K, H, W]`` -> ``[K]`` (or batched)."""
    single = x.ndim == 3
    xb = x[None] if single else x
    out, _ = gmp_forward(xb.transpose(0, 2, 3, 1))
    return out[0] if single else out


def global_max_pool_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    single = x.ndim == 3
    xb = x[None] if single else x
    xl = xb.transpose(0, 2, 3, 1)
    _, idx = gmp_forward(xl)
    dx = gmp_backward(dout[None] if single else dout, idx, xl.shape).transpose(0, 3, 1, 2)
    return dx[0] if single else dx


# -- dense, dropout, loss ----------------------------------------------------

def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``W @ x + b`` for ``x`` of shape ``[in]`` or ``[B, in]``; ``weight`` is ``[out, in]``."""
    return x @ weight.T + bias


def dense_backward(dout: np.ndarray, x: np.ndarray, weight: np.ndarray):
    if x.ndim == 1:
        return dout @ weight, np.outer(dout, x), dout.copy()
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, survivors ``1/(1-rate)``."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator | None, training: bool):
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    return x * dropout_mask(x.shape, rate, rng)


def mae_loss(pred, truth):
    """Mean absolute error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("mae_loss of empty arrays")
    diff = pred - truth
    return float(np.abs(diff).mean()), np.sign(diff) / diff.size


# -- optimisation ------------------------------------------------------------

@dataclass
class RmsPropState:
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    v: dict = field(default_factory=dict)


def rmsprop_step(param: np.ndarray, grad: np.ndarray, v: np.ndarray,
                 lr: float = 0.001, rho: float = 0.9, eps: float = 1e-8):
    """One RMSprop update; returns new ``(param, v)`` without touching the inputs."""
    if param.shape != grad.shape or v.shape != param.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, v {v.shape}")
    v = rho * v + (1.0 - rho) * grad * grad
    return param - lr * grad / (np.sqrt(v) + eps), v


class RMSprop:
    """RMSprop over a dict of named parameter arrays, updated in place."""

    def __init__(self, lr: float = 0.001, rho: float = 0.9, eps: float = 1e-8):
        self.state = RmsPropState(lr, rho, eps)

    def step(self, params: dict, grads: dict) -> None:
        st = self.state
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {p.shape} vs {g.shape}")
            v = st.v.get(name)
            if v is None:
                v = st.v[name] = np.zeros_like(p)
            v *= st.rho
            v += (1.0 - st.rho) * g * g
            if st.lr != 0:
                p -= st.lr * g / (np.sqrt(v) + st.eps)


@dataclass
class EarlyStopMonitor:
    """Stops after ``patience`` epochs without a strict improvement, or at ``max_epochs``."""

    patience: int = 10
    max_epochs: int = 1000
    best_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    epoch: int = 0

    def update(self, loss: float) -> bool:
        """Record one epoch's loss; True means stop."""
        self.epoch += 1
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = self.epoch
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience or self.epoch >= self.max_epochs

    @property
    def improved(self) -> bool:
        return self.best_epoch == self.epoch


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)
