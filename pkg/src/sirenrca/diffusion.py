"""Reverse-time SDE sampling from an outlier noise vector toward the data
manifold, storing per-step scores and increments."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .validation import as_vector


class TrajectoryError(RuntimeError):
    """Raised when integration produces a non-finite state."""


def diffusion_coefficient(t: float, sigma_max: float) -> float:
    """Perturbation variance (sigma_max^(2t) - 1) / (2 log sigma_max)."""
    if sigma_max <= 1.0:
        raise ValueError("sigma_max must be > 1")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return (sigma_max ** (2.0 * t) - 1.0) / (2.0 * np.log(sigma_max))


def default_time_grid(n_steps: int, t_floor: float = 1e-3) -> tuple[np.ndarray, float]:
    """Uniform descending grid from t=1 to t_floor and its step size."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    dt = (1.0 - t_floor) / n_steps
    return np.linspace(1.0, t_floor, n_steps), dt


@dataclass
class Trajectory:
    """States, per-step drift scores, and exact increments.

    ``states`` has one more row than ``scores``/``steps``; by construction
    states[i] + steps[i] == states[i + 1] bitwise.
    """

    states: np.ndarray
    scores: np.ndarray
    steps: np.ndarray
    times: np.ndarray

    @property
    def start(self) -> np.ndarray:
        return self.states[0]

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,node,z,score,dz\n")
        for i, t in enumerate(self.times):
            for j in range(self.states.shape[1]):
                buf.write(
                    f"{t!r},{j},{self.states[i, j]!r},"
                    f"{self.scores[i, j]!r},{self.steps[i, j]!r}\n"
                )
        return buf.getvalue()


def _node_scales(models, d: int) -> np.ndarray:
    scales = np.ones(d)
    for j in range(d):
        model = models.get(j) if isinstance(models, dict) else models[j]
        if model is not None:
            scales[j] = float(getattr(model, "scale", 1.0))
    return scales


def sample_trajectory(
    models,
    z0,
    time_grid=None,
    dt: float | None = None,
    sigma_max: float = 10.0,
    seed: int = 0,
    deterministic: bool = False,
) -> Trajectory:
    """Euler-Maruyama integration of the reverse-time dynamics.

    Per step at time t_i: sigma^2 from the schedule, component-wise drift
    sigma^2 * score * dt, Gaussian noise sigma * sqrt(dt) (suppressed in
    deterministic mode). Each node's schedule is scaled by its model's
    noise scale so the dynamics cover that node's residual support; on
    unit-scale noise this reduces to the common scalar schedule. Nodes
    without a model (dict input) stay frozen.
    """
    return sample_trajectories(
        models, z0, 1, time_grid, dt, sigma_max, seed, deterministic
    )[0]


def sample_trajectories(
    models,
    z0,
    m: int,
    time_grid=None,
    dt: float | None = None,
    sigma_max: float = 10.0,
    seed: int = 0,
    deterministic: bool = False,
    antithetic: bool = False,
) -> list[Trajectory]:
    """Batch variant of sample_trajectory; trajectories evolve in lockstep.

    With ``antithetic`` set, consecutive trajectories use mirrored Brownian
    draws, which cancels first-order Monte Carlo noise in downstream
    averages.
    """
    z0 = as_vector(z0, "z0")
    d = z0.size
    if time_grid is None:
        time_grid, grid_dt = default_time_grid(100)
        dt = grid_dt if dt is None else dt
    else:
        time_grid = np.asarray(time_grid, dtype=float)
        if dt is None:
            raise ValueError("dt is required with an explicit time grid")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = len(time_grid)
    rng = np.random.default_rng(seed)
    scales = _node_scales(models, d)
    active = np.array(
        [
            (models.get(j) if isinstance(models, dict) else models[j]) is not None
            for j in range(d)
        ]
    )
    Z = np.tile(z0, (m, 1))
    states = np.empty((m, n + 1, d))
    scores = np.empty((m, n, d))
    steps = np.empty((m, n, d))
    states[:, 0] = Z
    sqrt_dt = np.sqrt(dt)
    for i, t in enumerate(time_grid):
        var = diffusion_coefficient(t, sigma_max)
        grad = np.zeros((m, d))
        for j in range(d):
            if not active[j]:
                continue
            model = models.get(j) if isinstance(models, dict) else models[j]
            grad[:, j] = model.score(Z[:, j], t)
        drift = (scales**2 * var) * grad * dt
        if deterministic:
            step = drift
        else:
            eps = rng.normal(size=(m, d))
            if antithetic:
                half = (m + 1) // 2
                eps[half:] = -eps[: m - half]
            noise = scales * np.sqrt(var) * sqrt_dt * eps
            noise[:, ~active] = 0.0
            step = drift + noise
        z_new = Z + step
        if not np.isfinite(z_new).all():
            raise TrajectoryError(f"non-finite state at step {i}")
        scores[:, i] = grad
        steps[:, i] = step
        Z = z_new
        states[:, i + 1] = Z
    return [
        Trajectory(states[k], scores[k], steps[k], time_grid.copy()) for k in range(m)
    ]
