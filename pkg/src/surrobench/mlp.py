"""Feedforward and residual multilayer perceptrons trained with Adam.

Pure numpy; forward and backward passes work on batches ``(N, d)``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .basis import check_in_box
from .data import Dataset, FitStats
from .errors import FitError
from .metrics import err2

log = logging.getLogger(__name__)

_ACT = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
}


@dataclass(frozen=True)
class MLPConfig:
    input_dim: int
    hidden_widths: tuple = (512, 512, 512)
    activation: str = "relu"
    residual: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or any(w < 1 for w in self.hidden_widths):
            raise ValueError("dimensions must be positive")
        if self.activation not in _ACT:
            raise ValueError(f"activation must be one of {sorted(_ACT)}")
        if self.residual and len(set(self.hidden_widths)) > 1:
            raise ValueError("residual networks need equal hidden widths")


@dataclass
class MLPParams:
    """Hidden layers ``(W, b)`` with W of shape (out, in), then the linear head."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching nonempty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: weight {w.shape} vs bias {b.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k} does not chain onto layer {k - 1}")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("output layer must be scalar")

    @property
    def count(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> list:
        return [a for pair in zip(self.weights, self.biases) for a in pair]


def init_params(config: MLPConfig) -> MLPParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    rng = np.random.default_rng(config.seed)
    sizes = (config.input_dim, *config.hidden_widths, 1)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-a, a, (fan_out, fan_in)))
        bs.append(rng.uniform(-a, a, fan_out))
    return MLPParams(ws, bs)


def zero_params(config: MLPConfig) -> MLPParams:
    sizes = (config.input_dim, *config.hidden_widths, 1)
    return MLPParams([np.zeros((o, i)) for i, o in zip(sizes[:-1], sizes[1:])],
                     [np.zeros(o) for o in sizes[1:]])


def _skip(config, layer, params):
    return config.residual and layer > 0 and params.weights[layer].shape[0] == params.weights[layer].shape[1]


def _forward_cache(params: MLPParams, config: MLPConfig, x):
    act = _ACT[config.activation][0]
    hs, zs = [x], []
    h = x
    n_hidden = len(params.weights) - 1
    for layer in range(n_hidden):
        z = h @ params.weights[layer].T + params.biases[layer]
        a = act(z)
        h = h + a if _skip(config, layer, params) else a
        zs.append(z)
        hs.append(h)
    out = h @ params.weights[-1][0] + params.biases[-1][0]
    return out, hs, zs


def _points(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ValueError(f"points have dimension {x.shape[1]}, network expects {d}")
    return x, single


def forward(params: MLPParams, config: MLPConfig, x):
    x, single = _points(x, config.input_dim)
    out = _forward_cache(params, config, x)[0]
    return out[0] if single else out


def _backward(params, config, hs, zs, dout):
    """Gradients w.r.t. parameters and input for upstream ``dout`` (N,)."""
    dact = _ACT[config.activation][1]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    gw[-1] = (dout @ hs[-1])[None, :]
    gb[-1] = np.array([dout.sum()])
    gh = np.outer(dout, params.weights[-1][0])
    for layer in range(len(params.weights) - 2, -1, -1):
        gz = gh * dact(zs[layer])
        gw[layer] = gz.T @ hs[layer]
        gb[layer] = gz.sum(axis=0)
        back = gz @ params.weights[layer]
        gh = gh + back if _skip(config, layer, params) else back
    return MLPParams(gw, gb), gh


def loss_and_grad(params: MLPParams, config: MLPConfig, x, y):
    """Mean squared error on the batch and its exact parameter gradient."""
    x, _ = _points(x, config.input_dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) == 0:
        raise ValueError("empty batch")
    out, hs, zs = _forward_cache(params, config, x)
    r = out - y
    loss = float(np.mean(r * r))
    grads, _ = _backward(params, config, hs, zs, 2.0 * r / len(y))
    return loss, grads


def predict_grad(params: MLPParams, config: MLPConfig, x):
    """Exact input gradient of the network output."""
    x, single = _points(x, config.input_dim)
    _, hs, zs = _forward_cache(params, config, x)
    _, g = _backward(params, config, hs, zs, np.ones(len(x)))
    return g[0] if single else g


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-3
    epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("batch_size >= 1 and learning_rate > 0 required")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MLPParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.flat()], [np.zeros_like(a) for a in params.flat()])


def adam_step(params: MLPParams, grads: MLPParams, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns (params, state), updated in place."""
    state.step += 1
    c1 = 1.0 - cfg.beta1 ** state.step
    c2 = 1.0 - cfg.beta2 ** state.step
    for p, g, m, v in zip(params.flat(), grads.flat(), state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


@dataclass
class MLPSurrogate:
    params: MLPParams
    config: MLPConfig
    domain: np.ndarray = None
    history: list = field(default_factory=list)

    @property
    def dofs(self) -> int:
        return self.params.count

    def __call__(self, x):
        check_in_box(x, self.domain)
        return forward(self.params, self.config, x)

    def grad(self, x):
        check_in_box(x, self.domain)
        return predict_grad(self.params, self.config, x)


def train(data: Dataset, mlp_config: MLPConfig, train_config: TrainConfig = TrainConfig(),
          params: MLPParams = None, log_path=None):
    """Mini-batch Adam on the mean squared error; returns (MLPSurrogate, FitStats)."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    t0 = time.perf_counter()
    params = init_params(mlp_config) if params is None else params.copy()
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(train_config.seed)
    history = []
    n = len(data)
    for epoch in range(train_config.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, train_config.batch_size):
            idx = perm[lo:lo + train_config.batch_size]
            loss, grads = loss_and_grad(params, mlp_config, data.x[idx], data.y[idx])
            if not np.isfinite(loss):
                raise FitError(f"training diverged at epoch {epoch} (loss {loss})")
            adam_step(params, grads, state, train_config)
            total += loss * len(idx)
        history.append(total / n)
    cpu = time.perf_counter() - t0
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss\n")
            for e, l in enumerate(history):
                fh.write(f"{e},{l:.10e}\n")
    sur = MLPSurrogate(params, mlp_config, history=history)
    pred = forward(params, mlp_config, data.x)
    stats = FitStats(err_train_2=err2(pred, data.y) if np.any(data.y) else float(np.sqrt(np.mean(pred ** 2))),
                     dofs=params.count, n_train_samples=n, cpu_train_s=cpu, sweeps=train_config.epochs,
                     extra={"loss_history": history})
    return sur, stats
