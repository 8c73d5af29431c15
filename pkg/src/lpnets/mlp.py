"""Dense sigmoid network with Adam and exponential learning-rate decay.

Small and dependency-free apart from numpy: weights are stored as
``(fan_in, fan_out)`` matrices, rows of the data are samples. Inputs and
outputs are z-scored with constants fit on the training split and kept in
the model, so :func:`forward` works in original units.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    def __init__(self, epoch: int, history: list | None = None):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
        self.history = history or []


@dataclass
class MlpModel:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_shift: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_shift: np.ndarray | None = None
    y_scale: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.x_shift is None:
            self.x_shift = np.zeros(self.layer_sizes[0])
            self.x_scale = np.ones(self.layer_sizes[0])
        if self.y_shift is None:
            self.y_shift = np.zeros(self.layer_sizes[-1])
            self.y_scale = np.ones(self.layer_sizes[-1])

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.x_shift.copy(),
            self.x_scale.copy(),
            self.y_shift.copy(),
            self.y_scale.copy(),
            self.seed,
        )

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def build(layer_sizes: Sequence[int], seed: int = 0) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"need at least two layers of size >= 1, got {list(layer_sizes)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, weights, biases, seed=seed)


# -- evaluation and gradients (in scaled units) ----------------------------


def _raw_forward(weights, biases, z: np.ndarray) -> list[np.ndarray]:
    acts = [z]
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        pre = acts[-1] @ w + b
        acts.append(pre if i == last else expit(pre))
    return acts


def forward(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.layer_sizes[0]:
        raise ValueError(f"input has {X.shape[1]} features, network expects {model.layer_sizes[0]}")
    z = (X - model.x_shift) / model.x_scale
    out = _raw_forward(model.weights, model.biases, z)[-1] * model.y_scale + model.y_shift
    return out[0] if single else out


def loss_and_grad(weights, biases, Z: np.ndarray, T: np.ndarray):
    """MSE (mean over rows and outputs) and its gradient by backpropagation."""
    acts = _raw_forward(weights, biases, Z)
    err = acts[-1] - T
    loss = float(np.mean(err * err))
    delta = (2.0 / err.size) * err
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for i in range(len(weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            a = acts[i]
            delta = (delta @ weights[i].T) * a * (1.0 - a)
    return loss, gw, gb


def mse(model: MlpModel, X, Y) -> float:
    X = np.atleast_2d(X)
    if len(X) == 0:
        return float("nan")
    d = forward(model, X) - np.atleast_2d(Y)
    return float(np.mean(d * d))


# -- training --------------------------------------------------------------


@dataclass
class TrainConfig:
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    epochs: int = 1000
    split: float = 0.8
    seed: int = 0
    batch: int | None = None  # None: full batch
    target_mse: float | None = None  # early stop on train MSE (original units)
    log_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must be in (0, 1)")
        if not 0.0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch is not None and self.batch < 1:
            raise ValueError("batch must be positive")


@dataclass
class TrainResult:
    model: MlpModel
    history: list[tuple[int, float, float]] = field(default_factory=list)
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None

    @property
    def train_mse(self) -> float:
        return self.history[-1][1]

    @property
    def val_mse(self) -> float:
        return self.history[-1][2]


def split_indices(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    k = max(1, int(round(frac * n)))
    return np.sort(perm[:k]), np.sort(perm[k:])


def _scaling(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = A.mean(axis=0)
    scale = A.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return shift, scale


def train(model: MlpModel, X, Y, cfg: TrainConfig) -> TrainResult:
    """Adam on MSE with ``lr = lr_start * (lr_end/lr_start)^(epoch/epochs)``.

    The model is copied, standardised on the training split, and returned
    inside the result; the argument is left untouched.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if len(X) == 0:
        raise ValueError("no training data")
    if len(X) != len(Y):
        raise ValueError("inputs and targets differ in length")
    tr, va = split_indices(len(X), cfg.split, cfg.seed)
    model = model.copy()
    if cfg.epochs == 0:
        return TrainResult(model, [(0, mse(model, X[tr], Y[tr]), mse(model, X[va], Y[va]))], tr, va)

    model.x_shift, model.x_scale = _scaling(X[tr])
    model.y_shift, model.y_scale = _scaling(Y[tr])
    Zt = (X[tr] - model.x_shift) / model.x_scale
    Tt = (Y[tr] - model.y_shift) / model.y_scale
    W, B = model.weights, model.biases
    mW = [np.zeros_like(w) for w in W]
    vW = [np.zeros_like(w) for w in W]
    mB = [np.zeros_like(b) for b in B]
    vB = [np.zeros_like(b) for b in B]
    rng = np.random.Generator(np.random.PCG64(cfg.seed + 1))
    n = len(Zt)
    batch = n if cfg.batch is None else min(cfg.batch, n)
    ratio = cfg.lr_end / cfg.lr_start
    history: list[tuple[int, float, float]] = []
    step = 0

    def record(epoch: int) -> None:
        history.append((epoch, mse(model, X[tr], Y[tr]), mse(model, X[va], Y[va])))

    for epoch in range(cfg.epochs):
        lr = cfg.lr_start * ratio ** (epoch / cfg.epochs)
        order = rng.permutation(n) if batch < n else None
        for start in range(0, n, batch):
            if order is None:
                Zb, Tb = Zt, Tt
            else:
                sel = order[start : start + batch]
                Zb, Tb = Zt[sel], Tt[sel]
            loss, gW, gB = loss_and_grad(W, B, Zb, Tb)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, history)
            step += 1
            c1 = 1.0 - cfg.beta1**step
            c2 = 1.0 - cfg.beta2**step
            for p, g, m, v in zip(W + B, gW + gB, mW + mB, vW + vB):
                m *= cfg.beta1
                m += (1.0 - cfg.beta1) * g
                v *= cfg.beta2
                v += (1.0 - cfg.beta2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        last = epoch + 1 == cfg.epochs
        if last or (epoch + 1) % cfg.log_every == 0:
            record(epoch + 1)
            if not np.isfinite(history[-1][1]):
                raise DivergenceError(epoch, history)
            log.debug("epoch %d train %.3e val %.3e", *history[-1])
            if cfg.target_mse is not None and history[-1][1] <= cfg.target_mse:
                break
    return TrainResult(model, history, tr, va)


# -- persistence -----------------------------------------------------------


def to_dict(model: MlpModel, extra: dict | None = None) -> dict:
    return {
        "kind": "mlp",
        "layer_sizes": model.layer_sizes,
        "activation": "sigmoid",
        "output_activation": "identity",
        "n_params": model.n_params,
        "seed": model.seed,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "scaling": {
            "x_shift": model.x_shift.tolist(),
            "x_scale": model.x_scale.tolist(),
            "y_shift": model.y_shift.tolist(),
            "y_scale": model.y_scale.tolist(),
        },
        **(extra or {}),
    }


def from_dict(d: dict) -> MlpModel:
    if d.get("kind") != "mlp":
        raise ValueError("not an MLP checkpoint")
    sc = d["scaling"]
    return MlpModel(
        list(d["layer_sizes"]),
        [np.array(w, dtype=float) for w in d["weights"]],
        [np.array(b, dtype=float) for b in d["biases"]],
        np.array(sc["x_shift"]),
        np.array(sc["x_scale"]),
        np.array(sc["y_shift"]),
        np.array(sc["y_scale"]),
        int(d.get("seed", 0)),
    )


def save(model: MlpModel, path, extra: dict | None = None) -> None:
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(to_dict(model, extra)))


def load(path) -> MlpModel:
    return from_dict(json.loads(Path(path).read_text()))


def write_history_csv(path, history) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, a, b in history:
            w.writerow([epoch, repr(float(a)), repr(float(b))])


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
