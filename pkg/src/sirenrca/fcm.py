"""Functional causal models over a Dag: fitting, simulation, noise inversion.

Each node gets a mechanism (mean function, optional scale function, noise
model). Additive-noise and linear mechanisms invert by subtracting the
mean; location-scale mechanisms additionally standardize by the predicted
scale, so the recovered noise is the unit-scale exogenous variable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import Dag
from .nets import FitConfig, Mlp, SCALE_FLOOR, fit_heteroscedastic, fit_regression
from .validation import as_matrix, as_vector

ANM = "anm"
LSN = "lsn"
LINEAR = "linear"
KINDS = (ANM, LSN, LINEAR)


# ---------------------------------------------------------------------------
# noise models


@dataclass
class NoiseModel:
    """Distribution of a node's exogenous noise.

    Kinds: gaussian(sigma), mixture_of_gaussians(weights, means, sigmas),
    half_normal(scale), uniform(lo, hi), empirical(samples). Fitted noise
    models are zero-mean Gaussians; generators may use any kind.
    """

    kind: str
    params: dict

    def __post_init__(self):
        if self.kind == "empirical" and len(self.params["samples"]) < 30:
            raise ValueError("empirical noise model needs at least 30 samples")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = self.params
        if self.kind == "gaussian":
            return rng.normal(0.0, p["sigma"], size)
        if self.kind == "mixture_of_gaussians":
            comp = rng.choice(len(p["weights"]), size=size, p=p["weights"])
            means = np.asarray(p["means"])[comp]
            sigmas = np.asarray(p["sigmas"])[comp]
            return means + sigmas * rng.normal(size=size)
        if self.kind == "half_normal":
            return np.abs(rng.normal(0.0, p["scale"], size))
        if self.kind == "uniform":
            return rng.uniform(p["lo"], p["hi"], size)
        if self.kind == "empirical":
            samples = np.asarray(p["samples"])
            return samples[rng.integers(0, len(samples), size)]
        raise ValueError(f"unknown noise kind {self.kind!r}")

    def scaled(self, factor: float) -> "NoiseModel":
        """Same family with every scale parameter multiplied by factor."""
        p = dict(self.params)
        if self.kind == "gaussian":
            p["sigma"] = p["sigma"] * factor
        elif self.kind == "mixture_of_gaussians":
            p["sigmas"] = [s * factor for s in p["sigmas"]]
        elif self.kind == "half_normal":
            p["scale"] = p["scale"] * factor
        elif self.kind == "uniform":
            mid = 0.5 * (p["lo"] + p["hi"])
            half = 0.5 * (p["hi"] - p["lo"]) * factor
            p["lo"], p["hi"] = mid - half, mid + half
        elif self.kind == "empirical":
            p["samples"] = [s * factor for s in p["samples"]]
        return NoiseModel(self.kind, p)

    def to_dict(self) -> dict:
        p = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in self.params.items()
        }
        return {"kind": self.kind, "params": p}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        return cls(d["kind"], dict(d["params"]))


def gaussian_noise(sigma: float) -> NoiseModel:
    return NoiseModel("gaussian", {"sigma": float(sigma)})


# ---------------------------------------------------------------------------
# mean / scale functions


class ConstantMean:
    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.full(X.shape[0], self.value)

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return np.zeros_like(X)

    def to_dict(self):
        return {"type": "constant", "value": self.value}


class LinearMean:
    def __init__(self, coef, intercept: float):
        self.coef = np.asarray(coef, dtype=float)
        self.intercept = float(intercept)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef + self.intercept

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.coef, X.shape).copy()

    def to_dict(self):
        return {
            "type": "linear",
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
        }


class MlpMean:
    def __init__(self, net: Mlp):
        self.net = net

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.net.forward_batch(X)[:, 0]

    def gradient(self, X: np.ndarray) -> np.ndarray:
        return self.net.input_gradient_batch(X)

    def to_dict(self):
        return {"type": "mlp", "net": self.net.to_dict()}


class FuncMean:
    """Generator-only mean function wrapping an arbitrary callable."""

    def __init__(self, fn):
        self.fn = fn

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(X), dtype=float).reshape(X.shape[0])

    def gradient(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError("generator mean functions expose no gradient")

    def to_dict(self):
        raise TypeError("generator mechanisms are not serializable")


class MlpScale:
    """Positive scale function backed by a shifted-tanh net, floored."""

    def __init__(self, net: Mlp):
        self.net = net
        self.floor = SCALE_FLOOR * float(net.y_std[0])
        self.floor_hits = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        raw = self.net.forward_batch(X)[:, 0]
        hits = int(np.sum(raw < self.floor))
        if hits:
            self.floor_hits += hits
        return np.maximum(raw, self.floor)

    def gradient(self, X: np.ndarray) -> np.ndarray:
        raw = self.net.forward_batch(X)[:, 0]
        grad = self.net.input_gradient_batch(X)
        grad[raw < self.floor] = 0.0
        return grad

    def to_dict(self):
        return {"type": "mlp_scale", "net": self.net.to_dict()}


class FuncScale:
    """Generator-only scale function; clipped away from zero."""

    def __init__(self, fn, floor: float = 1e-6):
        self.fn = fn
        self.floor = floor

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(
            np.asarray(self.fn(X), dtype=float).reshape(X.shape[0]), self.floor
        )

    def gradient(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError("generator scale functions expose no gradient")

    def to_dict(self):
        raise TypeError("generator mechanisms are not serializable")


def _mean_from_dict(d: dict):
    if d["type"] == "constant":
        return ConstantMean(d["value"])
    if d["type"] == "linear":
        return LinearMean(d["coef"], d["intercept"])
    if d["type"] == "mlp":
        return MlpMean(Mlp.from_dict(d["net"]))
    raise ValueError(f"unknown mean function type {d['type']!r}")


# ---------------------------------------------------------------------------
# mechanisms and the fitted model


@dataclass
class NodeMechanism:
    kind: str
    mean_fn: object
    noise: NoiseModel
    scale_fn: object | None = None
    noise_std: float = 1.0
    residuals: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mean_fn": self.mean_fn.to_dict(),
            "scale_fn": self.scale_fn.to_dict() if self.scale_fn else None,
            "noise": self.noise.to_dict(),
            "noise_std": self.noise_std,
            "residuals": None
            if self.residuals is None
            else np.asarray(self.residuals).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NodeMechanism":
        scale = None
        if d["scale_fn"] is not None:
            scale = MlpScale(Mlp.from_dict(d["scale_fn"]["net"]))
        return cls(
            d["kind"],
            _mean_from_dict(d["mean_fn"]),
            NoiseModel.from_dict(d["noise"]),
            scale,
            float(d["noise_std"]),
            None if d["residuals"] is None else np.array(d["residuals"]),
        )


@dataclass
class FittedFcm:
    dag: Dag
    mechanisms: list[NodeMechanism]
    kind: str = ANM
    column_means: np.ndarray | None = None
    column_stds: np.ndarray | None = None
    fit_warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.mechanisms) != self.dag.n_nodes:
            raise ValueError("one mechanism per node required")

    def _pa(self, X: np.ndarray, j: int) -> np.ndarray:
        return X[:, self.dag.parents[j]]

    def node_mean(self, j: int, X: np.ndarray) -> np.ndarray:
        return self.mechanisms[j].mean_fn.predict(self._pa(X, j))

    def node_scale(self, j: int, X: np.ndarray) -> np.ndarray:
        mech = self.mechanisms[j]
        if mech.scale_fn is None:
            return np.ones(X.shape[0])
        return mech.scale_fn.predict(self._pa(X, j))

    def forward_batch(self, Z: np.ndarray) -> np.ndarray:
        Z = as_matrix(Z, "Z")
        if Z.shape[1] != self.dag.n_nodes:
            raise ValueError("noise matrix has wrong width")
        X = np.zeros_like(Z)
        for j in self.dag.topo_order:
            mu = self.node_mean(j, X)
            if self.mechanisms[j].scale_fn is not None:
                X[:, j] = mu + self.node_scale(j, X) * Z[:, j]
            else:
                X[:, j] = mu + Z[:, j]
        return X

    def forward(self, z) -> np.ndarray:
        z = as_vector(z, "z", length=self.dag.n_nodes)
        return self.forward_batch(z.reshape(1, -1))[0]

    def invert_batch(self, X: np.ndarray) -> np.ndarray:
        X = as_matrix(X, "X")
        if X.shape[1] != self.dag.n_nodes:
            raise ValueError("observation matrix has wrong width")
        Z = np.zeros_like(X)
        for j in range(self.dag.n_nodes):
            resid = X[:, j] - self.node_mean(j, X)
            if self.mechanisms[j].scale_fn is not None:
                resid = resid / self.node_scale(j, X)
            Z[:, j] = resid
        return Z

    def invert(self, x) -> np.ndarray:
        x = as_vector(x, "x", length=self.dag.n_nodes)
        return self.invert_batch(x.reshape(1, -1))[0]

    def sample(self, m: int, seed: int) -> np.ndarray:
        if m < 1:
            raise ValueError("m must be >= 1")
        rng = np.random.default_rng(seed)
        Z = np.zeros((m, self.dag.n_nodes))
        for j in self.dag.topo_order:
            Z[:, j] = self.mechanisms[j].noise.sample(rng, m)
        return self.forward_batch(Z)

    def sample_noise(self, m: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        Z = np.zeros((m, self.dag.n_nodes))
        for j in range(self.dag.n_nodes):
            Z[:, j] = self.mechanisms[j].noise.sample(rng, m)
        return Z

    def is_linear_gaussian(self) -> bool:
        return self.kind == LINEAR and all(
            mech.noise.kind == "gaussian" for mech in self.mechanisms
        )

    def to_dict(self) -> dict:
        return {
            "dag": self.dag.to_dict(),
            "kind": self.kind,
            "mechanisms": [m.to_dict() for m in self.mechanisms],
            "column_means": None
            if self.column_means is None
            else self.column_means.tolist(),
            "column_stds": None
            if self.column_stds is None
            else self.column_stds.tolist(),
            "fit_warnings": list(self.fit_warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedFcm":
        return cls(
            Dag.from_dict(d["dag"]),
            [NodeMechanism.from_dict(m) for m in d["mechanisms"]],
            d["kind"],
            None if d["column_means"] is None else np.array(d["column_means"]),
            None if d["column_stds"] is None else np.array(d["column_stds"]),
            list(d["fit_warnings"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "FittedFcm":
        return cls.from_dict(json.loads(s))


# ---------------------------------------------------------------------------
# fitting


def _ols(X: np.ndarray, y: np.ndarray, ridge: float) -> tuple[np.ndarray, float]:
    Xc = np.column_stack([X, np.ones(len(X))])
    A = Xc.T @ Xc
    A[np.diag_indices(X.shape[1])] += ridge * len(X)
    beta = np.linalg.solve(A, Xc.T @ y)
    return beta[:-1], beta[-1]


def fit(
    dag: Dag,
    data,
    kind: str = ANM,
    config: FitConfig | None = None,
) -> FittedFcm:
    """Fit one mechanism per node on its parents' columns.

    LINEAR uses closed-form least squares with a small ridge, ANM a
    least-squares net, LSN a heteroscedastic mean/scale pair. Residual
    noise is stored both as a zero-mean moment-matched Gaussian and as the
    raw empirical residual vector. Zero-variance targets fall back to a
    constant mechanism with a recorded warning.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    X = as_matrix(data, "data", min_rows=50)
    if X.shape[1] != dag.n_nodes:
        raise ValueError(
            f"data has {X.shape[1]} columns but the graph has {dag.n_nodes} nodes"
        )
    cfg = config or FitConfig()
    warnings: list[str] = []
    mechanisms: list[Optional[NodeMechanism]] = [None] * dag.n_nodes
    for j in range(dag.n_nodes):
        pa = dag.parents[j]
        y = X[:, j]
        node_seed = (cfg.seed * 1_000_003 + j) % (2**63)
        node_cfg = FitConfig(
            hidden_dims=cfg.hidden_dims,
            activation=cfg.activation,
            l2_weight=cfg.l2_weight,
            epochs=cfg.epochs,
            learning_rate=cfg.learning_rate,
            seed=node_seed,
            batch_cap=cfg.batch_cap,
            minibatch=cfg.minibatch,
        )
        scale_fn = None
        if not pa or np.std(y) < 1e-12:
            if pa and np.std(y) < 1e-12:
                warnings.append(f"node {j}: zero-variance target, constant mechanism")
            mean_fn = ConstantMean(y.mean())
            resid = y - y.mean()
        else:
            P = X[:, pa]
            degenerate = np.std(P, axis=0) < 1e-12
            if degenerate.any():
                warnings.append(
                    f"node {j}: zero-variance parent column(s) "
                    f"{[pa[i] for i in np.where(degenerate)[0]]}"
                )
            if kind == LINEAR:
                coef, intercept = _ols(P, y, ridge=1e-8)
                mean_fn = LinearMean(coef, intercept)
                resid = y - mean_fn.predict(P)
            elif kind == ANM:
                mean_fn = MlpMean(fit_regression(P, y, node_cfg))
                resid = y - mean_fn.predict(P)
            else:
                mean_net, scale_net = fit_heteroscedastic(P, y, node_cfg)
                mean_fn = MlpMean(mean_net)
                scale_fn = MlpScale(scale_net)
                resid = (y - mean_fn.predict(P)) / scale_fn.predict(P)
        sigma = float(np.std(resid))
        mechanisms[j] = NodeMechanism(
            kind=kind if pa else "root",
            mean_fn=mean_fn,
            noise=gaussian_noise(max(sigma, 1e-9)),
            scale_fn=scale_fn,
            noise_std=max(sigma, 1e-9),
            residuals=resid.copy(),
        )
    fcm = FittedFcm(
        dag,
        mechanisms,
        kind,
        column_means=X.mean(axis=0),
        column_stds=X.std(axis=0),
        fit_warnings=warnings,
    )
    return fcm


def invert_noise(fcm: FittedFcm, x) -> np.ndarray:
    return fcm.invert(x)


def forward(fcm: FittedFcm, z) -> np.ndarray:
    return fcm.forward(z)


def sample(fcm: FittedFcm, m: int, seed: int) -> np.ndarray:
    return fcm.sample(m, seed)
