"""Small fully-connected ReLU networks trained with momentum SGD.

Two heads are used downstream: a linear head for frequency-nadir
regression and a two-class softmax head for stability/security
classification.  Everything is plain numpy in float64 so that trained
networks can later be embedded exactly inside a mixed-integer model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ModelError(ValueError):
    """Raised for malformed training inputs or model files."""


@dataclass
class MlpNetwork:
    weights: list[np.ndarray]  # per layer, shape (n_in, n_out)
    biases: list[np.ndarray]  # per layer, shape (n_out,)
    head: str  # "linear" or "softmax"
    mean: np.ndarray  # input normalization offset
    scale: np.ndarray  # input normalization divisor, > 0
    training: dict = field(default_factory=dict)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]


def init_network(sizes: list[int], head: str, seed: int) -> MlpNetwork:
    """Uniform init scaled by fan-in: U(-1/sqrt(n_in), 1/sqrt(n_in))."""
    if head not in ("linear", "softmax"):
        raise ModelError(f"unknown head {head!r}")
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ModelError(f"bad layer sizes {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(rng.uniform(-bound, bound, size=n_out))
    d = sizes[0]
    return MlpNetwork(weights, biases, head, np.zeros(d), np.ones(d))


def _as_batch(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d:
        raise ModelError(f"input shape {x.shape} does not match {d} features")
    return x


def mlp_logits(net: MlpNetwork, x: np.ndarray) -> np.ndarray:
    """Pre-head affine output, shape (n, n_outputs)."""
    h = (_as_batch(x, net.n_inputs) - net.mean) / net.scale
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def mlp_forward(net: MlpNetwork, x: np.ndarray) -> np.ndarray:
    """Network output: probabilities for softmax head, values otherwise."""
    z = mlp_logits(net, x)
    return softmax(z) if net.head == "softmax" else z


def _hidden_activations(net: MlpNetwork, x: np.ndarray) -> list[np.ndarray]:
    acts = [(_as_batch(x, net.n_inputs) - net.mean) / net.scale]
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        acts.append(np.maximum(acts[-1] @ w + b, 0.0))
    return acts


def loss_and_gradients(
    net: MlpNetwork, x: np.ndarray, target: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean loss over the batch and gradients w.r.t. every W and b.

    Linear head: mean squared error against float targets (n, n_out).
    Softmax head: cross entropy against integer class labels (n,).
    """
    acts = _hidden_activations(net, x)
    z = acts[-1] @ net.weights[-1] + net.biases[-1]
    n = x.shape[0] if np.ndim(x) > 1 else 1

    if net.head == "softmax":
        labels = np.asarray(target, dtype=int)
        p = softmax(z)
        eps = 1e-12
        loss = float(-np.log(p[np.arange(n), labels] + eps).mean())
        delta = p.copy()
        delta[np.arange(n), labels] -= 1.0
        delta /= n
    else:
        y = np.asarray(target, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        resid = z - y
        loss = float((resid**2).mean())
        delta = 2.0 * resid / resid.size

    grads_w = [np.empty(0)] * len(net.weights)
    grads_b = [np.empty(0)] * len(net.biases)
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.weights[i].T
            delta[acts[i] <= 0.0] = 0.0  # ReLU gate
    return loss, grads_w, grads_b


def evaluate_loss(net: MlpNetwork, x: np.ndarray, target: np.ndarray) -> float:
    if net.head == "softmax":
        p = mlp_forward(net, x)
        labels = np.asarray(target, dtype=int)
        return float(-np.log(p[np.arange(len(labels)), labels] + 1e-12).mean())
    y = np.asarray(target, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    return float(((mlp_logits(net, x) - y) ** 2).mean())


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (16,)
    epochs: int = 3000
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    val_fraction: float = 0.2
    patience: int | None = None  # epochs without val improvement; None = run all
    seed: int = 0


def _check_training_inputs(x: np.ndarray, target: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ModelError("non-finite values in training features")
    if not np.all(np.isfinite(np.asarray(target, dtype=float))):
        raise ModelError("non-finite values in training targets")
    if x.shape[0] < 5:
        raise ModelError(f"need at least 5 training samples, got {x.shape[0]}")
    if x.shape[0] != np.asarray(target).shape[0]:
        raise ModelError("feature/target row counts differ")


def _train(net: MlpNetwork, x: np.ndarray, target: np.ndarray, cfg: TrainConfig) -> dict:
    rng = np.random.default_rng(cfg.seed + 1)
    n = x.shape[0]
    n_val = int(round(cfg.val_fraction * n))
    if n_val > 0:
        order = rng.permutation(n)
        val_idx, train_idx = order[:n_val], order[n_val:]
    else:
        train_idx = np.arange(n)
        val_idx = np.empty(0, dtype=int)
    xt, yt = x[train_idx], np.asarray(target)[train_idx]
    xv, yv = x[val_idx], np.asarray(target)[val_idx]

    # Normalization statistics from the training split only.
    mu = xt.mean(axis=0)
    sd = xt.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)  # constant columns pass through
    net.mean, net.scale = mu, sd

    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    best_val = np.inf
    best_state = None
    best_epoch = -1
    stale = 0
    history = {"train_loss": [], "val_loss": []}

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(xt))
        epoch_loss = 0.0
        for start in range(0, len(xt), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, gw, gb = loss_and_gradients(net, xt[idx], yt[idx])
            epoch_loss += loss * len(idx)
            for i in range(len(net.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.lr * gw[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.lr * gb[i]
                net.weights[i] += vel_w[i]
                net.biases[i] += vel_b[i]
        history["train_loss"].append(epoch_loss / len(xt))

        if n_val > 0:
            val = evaluate_loss(net, xv, yv)
            history["val_loss"].append(val)
            if val < best_val - 1e-12:
                best_val, best_epoch, stale = val, epoch, 0
                best_state = (
                    [w.copy() for w in net.weights],
                    [b.copy() for b in net.biases],
                )
            else:
                stale += 1
                if cfg.patience is not None and stale >= cfg.patience:
                    break

    if best_state is not None:
        net.weights, net.biases = best_state
    return {
        "history": history,
        "best_epoch": best_epoch,
        "best_val_loss": None if n_val == 0 else best_val,
        "epochs_run": len(history["train_loss"]),
    }


def train_regressor(x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> MlpNetwork:
    x = np.asarray(x, dtype=float)
    _check_training_inputs(x, y)
    net = init_network([x.shape[1], *cfg.hidden, 1], "linear", cfg.seed)
    info = _train(net, x, np.asarray(y, dtype=float), cfg)
    net.training = {"kind": "regressor", "config": _cfg_dict(cfg), **_summ(info)}
    return net


def train_classifier(
    x: np.ndarray, labels: np.ndarray, cfg: TrainConfig, n_classes: int = 2
) -> MlpNetwork:
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels, dtype=int)
    _check_training_inputs(x, labels)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ModelError("class labels out of range")
    net = init_network([x.shape[1], *cfg.hidden, n_classes], "softmax", cfg.seed)
    info = _train(net, x, labels, cfg)
    net.training = {"kind": "classifier", "config": _cfg_dict(cfg), **_summ(info)}
    return net


def _cfg_dict(cfg: TrainConfig) -> dict:
    return {
        "hidden": list(cfg.hidden),
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "momentum": cfg.momentum,
        "batch_size": cfg.batch_size,
        "val_fraction": cfg.val_fraction,
        "patience": cfg.patience,
        "seed": cfg.seed,
    }


def _summ(info: dict) -> dict:
    hist = info["history"]
    return {
        "epochs_run": info["epochs_run"],
        "best_epoch": info["best_epoch"],
        "best_val_loss": info["best_val_loss"],
        "final_train_loss": hist["train_loss"][-1] if hist["train_loss"] else None,
    }


# ------------------------------------------------------------- metrics

def regression_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> dict:
    """MAX-E, MED-E, MEA-E of |error| plus the coefficient of determination.

    R2 is NaN when the targets have zero variance (undefined).
    """
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ModelError("metric inputs must be same-length non-empty vectors")
    err = np.abs(y_pred - y_true)
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = float("nan")
    else:
        r2 = 1.0 - float(((y_true - y_pred) ** 2).sum()) / ss_tot
    return {
        "max_e": float(err.max()),
        "med_e": float(np.median(err)),
        "mea_e": float(err.mean()),
        "r2": r2,
    }


def classification_accuracy(net: MlpNetwork, x: np.ndarray, labels: np.ndarray) -> float:
    pred = mlp_forward(net, x).argmax(axis=1)
    return float((pred == np.asarray(labels, dtype=int)).mean())


# ------------------------------------------- folding and bound analysis

def fold_normalization(net: MlpNetwork) -> MlpNetwork:
    """Equivalent network with the z-score absorbed into the first layer."""
    w0 = net.weights[0] / net.scale[:, None]
    b0 = net.biases[0] - (net.mean / net.scale) @ net.weights[0]
    weights = [w0] + [w.copy() for w in net.weights[1:]]
    biases = [b0] + [b.copy() for b in net.biases[1:]]
    d = net.n_inputs
    return MlpNetwork(
        weights, biases, net.head, np.zeros(d), np.ones(d), dict(net.training)
    )


def propagate_bounds(
    net: MlpNetwork, lo: np.ndarray, hi: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Interval bounds on every affine-layer output over an input box.

    Returns one (lower, upper) pair per layer: pre-activation bounds for
    hidden layers, output bounds for the last layer.  The input box is
    passed through the network's normalization first.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (net.n_inputs,) or hi.shape != (net.n_inputs,):
        raise ModelError("bound vectors must match the input dimension")
    if np.any(lo > hi):
        raise ModelError("lower bound exceeds upper bound")
    cur_lo = (lo - net.mean) / net.scale
    cur_hi = (hi - net.mean) / net.scale
    out = []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        wp = np.maximum(w, 0.0)
        wn = np.minimum(w, 0.0)
        pre_lo = cur_lo @ wp + cur_hi @ wn + b
        pre_hi = cur_hi @ wp + cur_lo @ wn + b
        out.append((pre_lo, pre_hi))
        if i < last:
            cur_lo = np.maximum(pre_lo, 0.0)
            cur_hi = np.maximum(pre_hi, 0.0)
    return out


# ----------------------------------------------------------- model files

def save_model(net: MlpNetwork, path: str | Path) -> None:
    doc = {
        "schema": 1,
        "architecture": net.sizes,
        "head": net.head,
        "weights": [w.tolist() for w in net.weights],  # row-major, (n_in, n_out)
        "biases": [b.tolist() for b in net.biases],
        "normalization": {"mean": net.mean.tolist(), "scale": net.scale.tolist()},
        "training": net.training,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_model(path: str | Path) -> MlpNetwork:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    try:
        sizes = doc["architecture"]
        weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
        biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
        net = MlpNetwork(
            weights=weights,
            biases=biases,
            head=doc["head"],
            mean=np.asarray(doc["normalization"]["mean"], dtype=float),
            scale=np.asarray(doc["normalization"]["scale"], dtype=float),
            training=doc.get("training", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"{path}: malformed model file ({exc})") from None
    if net.head not in ("linear", "softmax"):
        raise ModelError(f"{path}: unknown head {net.head!r}")
    if net.sizes != sizes:
        raise ModelError(f"{path}: architecture {sizes} does not match weights")
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
            raise ModelError(f"{path}: layer {i}: inconsistent shapes")
    if np.any(net.scale <= 0):
        raise ModelError(f"{path}: normalization scale must be positive")
    return net
