"""Single-hidden-layer Cox network trained by full-batch gradient descent."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .coxph import BaselineHazard, breslow_from_risk, partial_loglik_from_risk
from .dataset import DesignMatrix
from .nonparametric import StepSurvivalCurve


@dataclass
class RiskNetwork:
    """``f(x) = w2 . relu(W1 x + b1) + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    @property
    def hidden_size(self) -> int:
        return self.w2.size

    @classmethod
    def zeros(cls, p: int, hidden: int) -> "RiskNetwork":
        return cls(np.zeros((hidden, p)), np.zeros(hidden), np.zeros(hidden), 0.0)

    @classmethod
    def random(cls, p: int, hidden: int, rng: np.random.Generator, scale: float = 0.1
               ) -> "RiskNetwork":
        return cls(rng.uniform(-scale, scale, (hidden, p)), rng.uniform(-scale, scale, hidden),
                   rng.uniform(-scale, scale, hidden), float(rng.uniform(-scale, scale)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def from_flat(cls, vec, p: int, hidden: int) -> "RiskNetwork":
        vec = np.asarray(vec, dtype=float)
        if vec.size != hidden * p + 2 * hidden + 1:
            raise ValueError("parameter vector does not match the network shape")
        i = hidden * p
        return cls(vec[:i].reshape(hidden, p).copy(), vec[i:i + hidden].copy(),
                   vec[i + hidden:i + 2 * hidden].copy(), float(vec[-1]))

    def squared_norm(self) -> float:
        return float(np.sum(self.W1 ** 2) + np.sum(self.b1 ** 2) + np.sum(self.w2 ** 2)
                     + self.b2 ** 2)

    def save_csv(self, path: str | os.PathLike) -> None:
        """One row per parameter: tensor name, index, value."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["tensor", "row", "col", "value"])
            for (r, c), v in np.ndenumerate(self.W1):
                w.writerow(["W1", r, c, repr(float(v))])
            for r, v in enumerate(self.b1):
                w.writerow(["b1", r, 0, repr(float(v))])
            for r, v in enumerate(self.w2):
                w.writerow(["w2", r, 0, repr(float(v))])
            w.writerow(["b2", 0, 0, repr(float(self.b2))])

    @classmethod
    def load_csv(cls, path: str | os.PathLike) -> "RiskNetwork":
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        hidden = 1 + max(int(r["row"]) for r in rows if r["tensor"] == "w2")
        p = 1 + max(int(r["col"]) for r in rows if r["tensor"] == "W1")
        net = cls.zeros(p, hidden)
        for r in rows:
            i, j, v = int(r["row"]), int(r["col"]), float(r["value"])
            if r["tensor"] == "W1":
                net.W1[i, j] = v
            elif r["tensor"] == "b1":
                net.b1[i] = v
            elif r["tensor"] == "w2":
                net.w2[i] = v
            else:
                net.b2 = v
        return net


def forward_risk(net: RiskNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.W1.shape[1]:
        raise ValueError(f"expected {net.W1.shape[1]} inputs, got {x.shape[-1]}")
    hidden = np.maximum(x @ net.W1.T + net.b1, 0.0)
    return hidden @ net.w2 + net.b2


def _unpack(X):
    if isinstance(X, DesignMatrix):
        return X.X, X.times, X.events
    return X


def cox_nn_loss(net: RiskNetwork, X, weight_decay: float = 0.0) -> float:
    """Negative Breslow partial log-likelihood plus an L2 penalty on all weights."""
    x, times, events = _unpack(X)
    eta = forward_risk(net, x)
    return -partial_loglik_from_risk(eta, times, events) + weight_decay * net.squared_norm()


def loss_gradient(net: RiskNetwork, X, weight_decay: float = 0.0) -> RiskNetwork:
    """Exact gradient of :func:`cox_nn_loss`, shaped like the network."""
    x, times, events = _unpack(X)
    pre = x @ net.W1.T + net.b1
    hidden = np.maximum(pre, 0.0)
    eta = hidden @ net.w2 + net.b2
    _, dl_deta = partial_loglik_from_risk(eta, times, events, grad_eta=True)
    g_eta = -dl_deta
    g_pre = (g_eta[:, None] * net.w2[None, :]) * (pre > 0)
    return RiskNetwork(
        W1=g_pre.T @ x + 2 * weight_decay * net.W1,
        b1=g_pre.sum(0) + 2 * weight_decay * net.b1,
        w2=hidden.T @ g_eta + 2 * weight_decay * net.w2,
        b2=float(g_eta.sum() + 2 * weight_decay * net.b2),
    )


@dataclass(frozen=True)
class TrainConfig:
    hidden_size: int = 16
    learning_rate: float = 1e-2
    epochs: int = 2000
    weight_decay: float = 1e-4
    seed: int = 7

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be at least 1")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class DeepSurvFit:
    net: RiskNetwork
    losses: np.ndarray = field(repr=False)
    baseline: BaselineHazard = field(repr=False)
    config: TrainConfig = TrainConfig()

    def risk(self, x) -> np.ndarray:
        return forward_risk(self.net, x)

    def curve(self, x) -> StepSurvivalCurve:
        eta = float(forward_risk(self.net, np.asarray(x, dtype=float)))
        return StepSurvivalCurve(self.baseline.event_times,
                                 np.exp(-self.baseline.cumulative * np.exp(eta)))

    def write_losses(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            for i, v in enumerate(self.losses):
                w.writerow([i, repr(float(v))])


def train_deepsurv(X: DesignMatrix, config: TrainConfig = TrainConfig()) -> DeepSurvFit:
    """Full-batch gradient descent on :func:`cox_nn_loss`.

    ``losses[k]`` is the loss before update ``k``; the last entry is the loss
    after the final update.
    """
    if X.events.sum() < 1:
        raise ValueError("need at least one event")
    rng = np.random.default_rng(config.seed)
    net = RiskNetwork.random(X.p, config.hidden_size, rng)
    p, h = X.p, config.hidden_size
    theta = net.flat()
    losses = np.empty(config.epochs + 1)
    for epoch in range(config.epochs + 1):
        cur = RiskNetwork.from_flat(theta, p, h)
        loss = cox_nn_loss(cur, X, config.weight_decay)
        if not np.isfinite(loss):
            raise NonFiniteLossError(epoch)
        losses[epoch] = loss
        if epoch == config.epochs:
            break
        g = loss_gradient(cur, X, config.weight_decay).flat()
        theta = theta - config.learning_rate * g
    net = RiskNetwork.from_flat(theta, p, h)
    baseline = breslow_from_risk(forward_risk(net, X.X), X.times, X.events)
    return DeepSurvFit(net, losses, baseline, config)


def deepsurv_predict_survival(net: RiskNetwork, X_train: DesignMatrix, x, t) -> np.ndarray:
    """``S(t | x)`` with a Breslow baseline driven by the network's risk scores."""
    baseline = breslow_from_risk(forward_risk(net, X_train.X), X_train.times, X_train.events)
    t = np.asarray(t, dtype=float)
    return np.exp(-baseline.cumhaz(t) * np.exp(float(forward_risk(net, np.asarray(x, dtype=float)))))
