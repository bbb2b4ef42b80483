"""Small dense networks trained with Adam, with exact input Jacobians.

Everything is plain numpy and float64. Networks double as mechanism mean
functions, heteroscedastic scale functions, and time-conditioned score
heads, so besides prediction they expose analytic input derivatives and a
JSON round-trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .validation import as_matrix, as_vector


class TrainingError(RuntimeError):
    """Raised when a training run produces a non-finite loss."""


def _tanh(z):
    return np.tanh(z)


def _dtanh(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _relu(z):
    return np.maximum(z, 0.0)


def _drelu(z):
    # subgradient 0 at exactly zero pre-activation
    return (z > 0).astype(float)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _swish(z):
    return z * _sigmoid(z)


def _dswish(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


_ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (_tanh, _dtanh),
    "relu": (_relu, _drelu),
    "swish": (_swish, _dswish),
}


def _out_identity(z):
    return z


def _dout_identity(z):
    return np.ones_like(z)


def _out_shifted_tanh(z):
    return 0.5 + np.tanh(z)


def _dout_shifted_tanh(z):
    t = np.tanh(z)
    return 1.0 - t * t


_OUTPUTS: dict[str, tuple[Callable, Callable]] = {
    "identity": (_out_identity, _dout_identity),
    "shifted_tanh": (_out_shifted_tanh, _dout_shifted_tanh),
}


@dataclass
class Mlp:
    """Dense feed-forward net with per-column input/output standardization.

    ``weights[l]`` has shape (out_dim, in_dim) for layer ``l``. The hidden
    activation applies to all layers but the last; ``output_transform``
    applies to the last. Standardization statistics default to identity
    and are set by the fitting routines.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "tanh"
    output_transform: str = "identity"
    x_mean: np.ndarray = field(default=None)
    x_std: np.ndarray = field(default=None)
    y_mean: np.ndarray = field(default=None)
    y_std: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.hidden_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if self.output_transform not in _OUTPUTS:
            raise ValueError(f"unknown output transform {self.output_transform!r}")
        for l, w in enumerate(self.weights):
            if w.shape != (self.layer_dims[l + 1], self.layer_dims[l]):
                raise ValueError(f"layer {l} weight shape {w.shape} mismatches dims")
            if not np.isfinite(w).all() or not np.isfinite(self.biases[l]).all():
                raise ValueError("non-finite parameters")
        if self.x_mean is None:
            self.x_mean = np.zeros(self.in_dim)
            self.x_std = np.ones(self.in_dim)
        if self.y_mean is None:
            self.y_mean = np.zeros(self.out_dim)
            self.y_std = np.ones(self.out_dim)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    # -- raw network (standardized space) ---------------------------------

    def _raw_forward(self, X: np.ndarray, keep: bool = False):
        act, _ = _ACTIVATIONS[self.hidden_activation]
        out, _ = _OUTPUTS[self.output_transform]
        last = len(self.weights) - 1
        a = X
        pres, acts = [], [X]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ W.T + b
            a = out(z) if l == last else act(z)
            if keep:
                pres.append(z)
                acts.append(a)
        return (a, pres, acts) if keep else a

    def _raw_backprop(self, pres, acts, dout, want_dx: bool = False):
        """Parameter gradients (and optionally input gradient) from dL/d(raw out)."""
        _, dact = _ACTIVATIONS[self.hidden_activation]
        _, dout_t = _OUTPUTS[self.output_transform]
        g = dout * dout_t(pres[-1])
        dW = [None] * len(self.weights)
        db = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            dW[l] = g.T @ acts[l]
            db[l] = g.sum(axis=0)
            if l > 0:
                g = (g @ self.weights[l]) * dact(pres[l - 1])
            elif want_dx:
                g = g @ self.weights[0]
        return (dW, db, g) if want_dx else (dW, db)

    # -- public interface (raw units) --------------------------------------

    def forward(self, x) -> np.ndarray:
        """Evaluate on a single input vector, returning a vector."""
        xv = as_vector(x, "x", length=self.in_dim)
        return self.forward_batch(xv.reshape(1, -1))[0]

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.in_dim:
            raise ValueError(f"expected {self.in_dim} input columns, got {X.shape[1]}")
        Xs = (X - self.x_mean) / self.x_std
        raw = self._raw_forward(Xs)
        return self.y_mean + self.y_std * raw

    def input_jacobian(self, x) -> np.ndarray:
        """Exact Jacobian of forward at x, shape (out_dim, in_dim)."""
        xv = as_vector(x, "x", length=self.in_dim)
        return self.input_jacobian_batch(xv.reshape(1, -1))[0]

    def input_jacobian_batch(self, X: np.ndarray) -> np.ndarray:
        """Exact Jacobians for each row of X, shape (m, out_dim, in_dim)."""
        X = np.asarray(X, dtype=float)
        Xs = (X - self.x_mean) / self.x_std
        _, dact = _ACTIVATIONS[self.hidden_activation]
        _, dout_t = _OUTPUTS[self.output_transform]
        _, pres, _ = self._raw_forward(Xs, keep=True)
        m = X.shape[0]
        # J starts as the last weight matrix scaled by the output slope,
        # then folds in diag(act') @ W for each earlier layer.
        J = dout_t(pres[-1])[:, :, None] * self.weights[-1][None, :, :]
        for l in range(len(self.weights) - 2, -1, -1):
            J = (J * dact(pres[l])[:, None, :]) @ self.weights[l]
        return (self.y_std[None, :, None] * J) / self.x_std[None, None, :]

    def input_gradient_batch(self, X: np.ndarray) -> np.ndarray:
        """Row-wise input gradient for scalar-output nets, shape (m, in_dim)."""
        if self.out_dim != 1:
            raise ValueError("input_gradient_batch requires a scalar output")
        return self.input_jacobian_batch(X)[:, 0, :]

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "hidden_activation": self.hidden_activation,
            "output_transform": self.output_transform,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_std": self.y_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        dims = [int(v) for v in d["layer_dims"]]
        weights = [
            np.array(w, dtype=float).reshape(dims[l + 1], dims[l])
            for l, w in enumerate(d["weights"])
        ]
        biases = [np.array(b, dtype=float) for b in d["biases"]]
        return cls(
            dims,
            weights,
            biases,
            d["hidden_activation"],
            d["output_transform"],
            np.array(d["x_mean"], dtype=float),
            np.array(d["x_std"], dtype=float),
            np.array(d["y_mean"], dtype=float),
            np.array(d["y_std"], dtype=float),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "Mlp":
        return cls.from_dict(json.loads(s))


def init_mlp(
    dims: Sequence[int],
    activation: str,
    output_transform: str,
    rng: np.random.Generator,
    weight_scale: float = 1.0,
) -> Mlp:
    """Glorot-uniform initialized net; biases start at zero."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = weight_scale * np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(list(dims), weights, biases, activation, output_transform)


@dataclass
class FitConfig:
    """Training knobs for the fitting routines.

    Defaults: two hidden tanh layers of 100 units, Adam at 1e-2 for 600
    epochs, full batch up to 2048 rows and minibatches of 256 beyond.
    """

    hidden_dims: tuple[int, ...] = (100, 100)
    activation: str = "tanh"
    l2_weight: float = 1e-4
    epochs: int = 600
    learning_rate: float = 1e-2
    seed: int = 0
    batch_cap: int = 2048
    minibatch: int = 256


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _params(net: Mlp) -> list[np.ndarray]:
    return net.weights + net.biases


def _lr_factor(epoch: int, total: int) -> float:
    """Cosine decay to a 2% floor over the run."""
    if total <= 1:
        return 1.0
    frac = min(max(epoch, 0) / total, 1.0)
    return 0.02 + 0.98 * 0.5 * (1.0 + np.cos(np.pi * frac))


def _batches(m: int, cfg: FitConfig, rng: np.random.Generator):
    if m <= cfg.batch_cap:
        yield np.arange(m)
        return
    order = rng.permutation(m)
    for start in range(0, m, cfg.minibatch):
        yield order[start : start + cfg.minibatch]


def _standardize(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = A.mean(axis=0)
    std = A.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (A - mean) / std, mean, std


def fit_regression(inputs, targets, config: FitConfig | None = None) -> Mlp:
    """Least-squares fit with L2 penalty; deterministic given config.seed.

    Epoch-average losses are attached to the returned net as
    ``training_loss``.
    """
    cfg = config or FitConfig()
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    X = as_matrix(inputs, "inputs")
    y = as_vector(targets, "targets", length=X.shape[0]).reshape(-1, 1)
    rng = np.random.default_rng(cfg.seed)
    Xs, x_mean, x_std = _standardize(X)
    ys, y_mean, y_std = _standardize(y)
    dims = [X.shape[1], *cfg.hidden_dims, 1]
    net = init_mlp(dims, cfg.activation, "identity", rng)
    opt = _Adam(_params(net), cfg.learning_rate)
    history = []
    for epoch in range(cfg.epochs):
        opt.lr = cfg.learning_rate * _lr_factor(epoch, cfg.epochs)
        epoch_loss = 0.0
        seen = 0
        for idx in _batches(X.shape[0], cfg, rng):
            xb, yb = Xs[idx], ys[idx]
            pred, pres, acts = net._raw_forward(xb, keep=True)
            err = pred - yb
            loss = float(np.mean(err**2))
            if not np.isfinite(loss):
                raise TrainingError("regression loss diverged")
            epoch_loss += loss * len(idx)
            seen += len(idx)
            dW, db = net._raw_backprop(pres, acts, (2.0 / len(idx)) * err)
            grads = [
                g + 2.0 * cfg.l2_weight * p
                for g, p in zip(dW + db, _params(net))
            ]
            opt.step(_params(net), grads)
        history.append(epoch_loss / seen)
    net.x_mean, net.x_std = x_mean, x_std
    net.y_mean, net.y_std = y_mean.ravel(), y_std.ravel()
    net.training_loss = history
    return net


SCALE_FLOOR = 1e-3

# The scale net's shifted-tanh output is mapped to std units with a factor
# of 2 so that the all-noise case (sigma equal to the target std) sits at
# the transform's neutral point instead of near its ceiling.
SCALE_UNIT = 2.0


def fit_heteroscedastic(
    inputs, targets, config: FitConfig | None = None
) -> tuple[Mlp, Mlp]:
    """Gaussian-likelihood fit of a mean net and a positive scale net.

    Minimizes sum (y - mu(x))^2 / (2 sigma(x)^2) + 0.5 log sigma(x)^2 with
    sigma floored at SCALE_FLOOR (standardized units). Optimization runs in
    three phases for stability: mean-only least squares, scale regression
    onto |residual| * sqrt(pi/2), then joint likelihood descent with a
    damped mean step. The scale net keeps the shifted-tanh output; its
    stored output std carries the SCALE_UNIT factor.
    """
    cfg = config or FitConfig()
    if cfg.epochs < 1:
        raise ValueError("epochs must be >= 1")
    X = as_matrix(inputs, "inputs")
    y = as_vector(targets, "targets", length=X.shape[0]).reshape(-1, 1)
    rng = np.random.default_rng(cfg.seed)
    Xs, x_mean, x_std = _standardize(X)
    ys, y_mean, y_std = _standardize(y)
    dims = [X.shape[1], *cfg.hidden_dims, 1]
    mean_net = init_mlp(dims, cfg.activation, "identity", rng)
    scale_net = init_mlp(dims, cfg.activation, "shifted_tanh", rng)
    scale_net.weights[-1][:] = 0.0  # sigma starts flat at the neutral point
    opt_m = _Adam(_params(mean_net), cfg.learning_rate)
    opt_s = _Adam(_params(scale_net), cfg.learning_rate)
    opt_m_joint = None
    warm_end = max(1, int(cfg.epochs * 0.5))
    moment_end = max(warm_end + 1, int(cfg.epochs * 0.8))
    history = []
    for epoch in range(cfg.epochs):
        opt_m.lr = cfg.learning_rate * _lr_factor(epoch, warm_end)
        opt_s.lr = cfg.learning_rate * _lr_factor(epoch - warm_end, cfg.epochs - warm_end)
        epoch_loss = 0.0
        seen = 0
        for idx in _batches(X.shape[0], cfg, rng):
            xb, yb = Xs[idx], ys[idx]
            n = len(idx)
            mu, mp, ma = mean_net._raw_forward(xb, keep=True)
            r = yb - mu
            if epoch < warm_end:
                loss = float(np.mean(r**2))
                if not np.isfinite(loss):
                    raise TrainingError("heteroscedastic warm-up diverged")
                dWm, dbm = mean_net._raw_backprop(mp, ma, (-2.0 / n) * r)
                grads = [
                    g + 2.0 * cfg.l2_weight * p
                    for g, p in zip(dWm + dbm, _params(mean_net))
                ]
                opt_m.step(_params(mean_net), grads)
                epoch_loss += loss * n
                seen += n
                continue
            sg, sp, sa = scale_net._raw_forward(xb, keep=True)
            sig = np.maximum(SCALE_UNIT * sg, SCALE_FLOOR)
            floored = SCALE_UNIT * sg < SCALE_FLOOR
            loss = float(np.mean(r**2 / (2.0 * sig**2) + np.log(sig)))
            if not np.isfinite(loss):
                raise TrainingError("heteroscedastic loss diverged")
            epoch_loss += loss * n
            seen += n
            if epoch < moment_end:
                target = np.abs(r) * np.sqrt(np.pi / 2.0) / SCALE_UNIT
                dWs, dbs = scale_net._raw_backprop(sp, sa, (2.0 / n) * (sg - target))
            else:
                dsig = np.where(floored, 0.0, (-(r**2) / sig**3 + 1.0 / sig) / n)
                dWs, dbs = scale_net._raw_backprop(sp, sa, SCALE_UNIT * dsig)
                if opt_m_joint is None:
                    opt_m_joint = _Adam(_params(mean_net), 0.1 * cfg.learning_rate)
                dWm, dbm = mean_net._raw_backprop(mp, ma, -r / sig**2 / n)
                grads_m = [
                    g + 2.0 * cfg.l2_weight * p
                    for g, p in zip(dWm + dbm, _params(mean_net))
                ]
                opt_m_joint.step(_params(mean_net), grads_m)
            grads_s = [
                g + 2.0 * cfg.l2_weight * p
                for g, p in zip(dWs + dbs, _params(scale_net))
            ]
            opt_s.step(_params(scale_net), grads_s)
        history.append(epoch_loss / seen)
    mean_net.x_mean, mean_net.x_std = x_mean, x_std
    mean_net.y_mean, mean_net.y_std = y_mean.ravel(), y_std.ravel()
    mean_net.training_loss = history
    scale_net.x_mean, scale_net.x_std = x_mean.copy(), x_std.copy()
    scale_net.y_mean = np.zeros(1)
    scale_net.y_std = SCALE_UNIT * y_std.ravel()
    return mean_net, scale_net
