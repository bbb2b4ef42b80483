"""Per-node noise score models and leaf-score composition.

Each node gets a time-conditioned estimator of the gradient of its noise
log-density under a variance-exploding perturbation schedule, trained by
denoising score matching. Composition propagates the leaf's local score
backward through mechanism Jacobians to every ancestor noise coordinate;
nodes off every path to the leaf receive exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fcm import FittedFcm
from .graph import ancestors
from .nets import Mlp, TrainingError, _Adam, _lr_factor, _params, init_mlp
from .validation import as_vector


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-exploding schedule sigma^2(t) = (s^(2t) - 1) / (2 log s)."""

    sigma_max: float = 10.0

    def __post_init__(self):
        if self.sigma_max <= 1.0:
            raise ValueError("sigma_max must be > 1")

    def variance(self, t):
        t = np.asarray(t, dtype=float)
        return (self.sigma_max ** (2.0 * t) - 1.0) / (2.0 * np.log(self.sigma_max))

    def sigma(self, t):
        return np.sqrt(self.variance(t))

    def to_dict(self) -> dict:
        return {"sigma_max": self.sigma_max}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(float(d["sigma_max"]))


@dataclass
class ScoreConfig:
    """Score-matching knobs.

    ``epochs=None`` picks the pass count so the total number of optimizer
    steps is close to ``target_steps`` regardless of sample count; more
    steps push the fit toward the wiggly finite-sample score at small
    diffusion times, fewer undertrain it.
    """

    hidden_dims: tuple[int, ...] = (100, 100, 100)
    activation: str = "swish"
    epochs: int | None = None
    target_steps: int = 1200
    learning_rate: float = 1e-3
    t_floor: float = 1e-3
    seed: int = 0
    minibatch: int = 512


@dataclass
class ScoreModel:
    """Score estimator for one node's noise distribution.

    The estimate is an analytic unit-Gaussian perturbed score plus a
    learned correction net (zero for Gaussian noise). The net works on
    standardized noise (mean ``mu``, scale ``scale``); ``score`` converts
    back, so callers always see raw-coordinate scores.
    """

    node: int
    net: Mlp
    schedule: NoiseSchedule
    mu: float = 0.0
    scale: float = 1.0

    def _standardized_score(self, u: np.ndarray, tt: np.ndarray) -> np.ndarray:
        base = -u / (1.0 + self.schedule.variance(tt))
        out = self.net.forward_batch(np.column_stack([u, tt]))[:, 0]
        return base + out

    def score(self, z, t) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        tt = np.broadcast_to(np.asarray(t, dtype=float), z.shape)
        u = (z - self.mu) / self.scale
        return self._standardized_score(u, tt) / self.scale

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "net": self.net.to_dict(),
            "schedule": self.schedule.to_dict(),
            "mu": self.mu,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreModel":
        return cls(
            int(d["node"]),
            Mlp.from_dict(d["net"]),
            NoiseSchedule.from_dict(d["schedule"]),
            float(d["mu"]),
            float(d["scale"]),
        )


class AnalyticScore:
    """Closed-form stand-in for a trained score model (tests, oracles)."""

    def __init__(self, fn, node: int = 0, scale: float = 1.0):
        self.fn = fn
        self.node = node
        self.scale = scale
        self.schedule = NoiseSchedule()

    def score(self, z, t) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return np.asarray(self.fn(z, t), dtype=float).reshape(z.shape)


def standard_normal_score(schedule: NoiseSchedule, sigma: float = 1.0) -> AnalyticScore:
    """Exact perturbed score of N(0, sigma^2): -z / (sigma^2 + sigma^2(t))."""

    def fn(z, t):
        return -z / (sigma**2 + schedule.variance(t))

    return AnalyticScore(fn)


def train_score_model(
    noise_samples,
    schedule: NoiseSchedule,
    config: ScoreConfig | None = None,
    node: int = 0,
) -> ScoreModel:
    """Denoising score matching under the variance-exploding schedule.

    Each epoch draws fresh diffusion times t ~ U(t_floor, 1) and
    antithetic perturbation pairs z_t = z0 +/- sigma(t) * eps, then
    minimizes the weighted residual E || sigma(t) s(z_t, t) + eps ||^2,
    whose optimum is the score of the sample distribution convolved with
    N(0, sigma^2(t)). The pairing cancels the gradient noise that
    otherwise swamps the small-t signal.
    """
    cfg = config or ScoreConfig()
    z0 = as_vector(noise_samples, "noise_samples")
    if z0.size < 100:
        raise ValueError(f"need at least 100 noise samples, got {z0.size}")
    mu, scale = float(z0.mean()), float(z0.std())
    if scale < 1e-9:
        scale = 1.0
    u0 = (z0 - mu) / scale
    m = u0.size
    batches_per_epoch = int(np.ceil(2 * m / cfg.minibatch))
    if cfg.epochs is None:
        epochs = int(np.clip(round(cfg.target_steps / batches_per_epoch), 30, 800))
    else:
        epochs = cfg.epochs
    rng = np.random.default_rng(cfg.seed)
    net = init_mlp([2, *cfg.hidden_dims, 1], cfg.activation, "identity", rng)
    opt = _Adam(_params(net), cfg.learning_rate)
    losses = []
    for epoch in range(epochs):
        opt.lr = cfg.learning_rate * _lr_factor(epoch, epochs)
        t = rng.uniform(cfg.t_floor, 1.0, m)
        eps = rng.normal(size=m)
        sig = schedule.sigma(t)
        zt = np.concatenate([u0 + sig * eps, u0 - sig * eps])
        tt = np.concatenate([t, t])
        ss = np.concatenate([sig, sig])
        ee = np.concatenate([eps, -eps])
        base = -zt / (1.0 + schedule.variance(tt))
        order = rng.permutation(2 * m)
        epoch_loss = 0.0
        for start in range(0, 2 * m, cfg.minibatch):
            idx = order[start : start + cfg.minibatch]
            inp = np.column_stack([zt[idx], tt[idx]])
            pred, pres, acts = net._raw_forward(inp, keep=True)
            pred = pred + base[idx, None]
            resid = ss[idx, None] * pred + ee[idx, None]
            loss = float(np.mean(resid**2))
            if not np.isfinite(loss):
                raise TrainingError("score matching loss diverged")
            epoch_loss += loss * len(idx)
            dout = 2.0 * ss[idx, None] * resid / len(idx)
            dW, db = net._raw_backprop(pres, acts, dout)
            opt.step(_params(net), dW + db)
        losses.append(epoch_loss / (2 * m))
    model = ScoreModel(node, net, schedule, mu, scale)
    model.training_loss = losses
    return model


def local_score(model, z: float, t: float) -> float:
    """Scalar score of one node's noise at (z, t)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return float(model.score(np.array([z]), t)[0])


def _closure_and_order(fcm: FittedFcm, leaf: int):
    closure = ancestors(fcm.dag, leaf) | {leaf}
    order = [j for j in reversed(fcm.dag.topo_order) if j in closure]
    return closure, order


def compose_leaf_score_batch(
    fcm: FittedFcm,
    models: dict[int, object] | list,
    Z: np.ndarray,
    t: float,
    leaf: int | None = None,
    leaf_values: np.ndarray | None = None,
) -> np.ndarray:
    """Leaf-score gradient with respect to every noise coordinate, batched.

    Reconstructs x by pushing each noise row through the model, seeds the
    leaf coordinate with the leaf's local score, and propagates backward:
    s_j = sum over children k on a path to the leaf of s_k * dx_k/dx_j,
    with location-scale mechanisms contributing dx_k/dx_j = df_k/dx_j +
    z_k * dsigma_k/dx_j. Non-ancestors of the leaf get exactly zero.

    When ``leaf_values`` is given, the leaf's residual is taken against
    those fixed observed values instead of the current noise coordinate,
    so the seed tracks how unlikely the observed leaf stays as the rest of
    the noise moves.
    """
    dag = fcm.dag
    leaf = dag.leaf if leaf is None else leaf
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    m = Z.shape[0]
    model_leaf = models[leaf] if not isinstance(models, dict) else models.get(leaf)
    if model_leaf is None:
        raise LookupError(f"no score model available for leaf node {leaf}")
    X = fcm.forward_batch(Z)
    if leaf_values is None:
        resid = Z[:, leaf]
    else:
        vals = np.broadcast_to(np.asarray(leaf_values, dtype=float), (m,))
        mu = fcm.node_mean(leaf, X)
        resid = vals - mu
        if fcm.mechanisms[leaf].scale_fn is not None:
            resid = resid / fcm.node_scale(leaf, X)
    closure, order = _closure_and_order(fcm, leaf)
    children = dag.children
    S = np.zeros_like(Z)
    S[:, leaf] = model_leaf.score(resid, t)
    # cache each closure node's Jacobian row with respect to its parents
    jac: dict[int, np.ndarray] = {}
    for k in closure:
        pa = dag.parents[k]
        if not pa:
            continue
        P = X[:, pa]
        g = fcm.mechanisms[k].mean_fn.gradient(P)
        if fcm.mechanisms[k].scale_fn is not None:
            zk = resid if (k == leaf and leaf_values is not None) else Z[:, k]
            g = g + zk[:, None] * fcm.mechanisms[k].scale_fn.gradient(P)
        jac[k] = g
    for j in order:
        if j == leaf:
            continue
        acc = np.zeros(m)
        for k in children[j]:
            if k not in closure:
                continue
            idx = dag.parents[k].index(j)
            acc += S[:, k] * jac[k][:, idx]
        # backward pass yields sensitivity to x_j; location-scale nodes map
        # noise to value through their scale, additive nodes one-to-one
        if fcm.mechanisms[j].scale_fn is not None:
            acc = acc * fcm.node_scale(j, X)
        S[:, j] = acc
    return S


def compose_leaf_score(
    fcm: FittedFcm,
    models,
    z,
    t: float,
    leaf: int | None = None,
    leaf_value: float | None = None,
) -> np.ndarray:
    z = as_vector(z, "z", length=fcm.dag.n_nodes)
    vals = None if leaf_value is None else np.array([leaf_value])
    return compose_leaf_score_batch(
        fcm, models, z.reshape(1, -1), t, leaf, vals
    )[0]
