"""Desk-scale continuous-control environments.

Two families, both deterministic given a reset seed and both ending episodes
only by time limit (truncated=True, done=False; there are no failure states):

* pendulum      -- classic torque-limited swing-up, 3-dim observation.
* chain-lqr-m   -- m carts coupled to their neighbours by springs, exactly
                   linear dynamics with quadratic cost, so a discrete-time
                   Riccati solve gives a ground-truth optimal return.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class EnvSpec:
    id: str
    state_dim: int
    action_dim: int
    action_bounds: Array  # per-dimension symmetric bound, shape (action_dim,)
    max_episode_steps: int
    dt: float


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class PendulumEnv:
    """Torque-limited pendulum swing-up.

    Observation (cos th, sin th, omega) with th measured from upright.
    Reward -(th_norm^2 + 0.1*omega^2 + 0.001*u^2); th_norm wraps the angle
    into (-pi, pi]. Semi-implicit Euler at dt=0.05, omega clipped to [-8, 8],
    torque bound 2, 200 steps per episode.
    """

    g = 10.0
    m = 1.0
    l = 1.0
    max_torque = 2.0
    max_speed = 8.0

    def __init__(self):
        self.spec = EnvSpec("pendulum", 3, 1, np.array([2.0]), 200, 0.05)
        self.theta = 0.0
        self.omega = 0.0
        self.steps = 0

    def reset(self, seed=None) -> Array:
        rng = _as_rng(seed)
        self.theta = rng.uniform(-np.pi, np.pi)
        self.omega = rng.uniform(-1.0, 1.0)
        self.steps = 0
        return self._obs()

    def _obs(self) -> Array:
        return np.array([np.cos(self.theta), np.sin(self.theta), self.omega])

    def step(self, action: Array):
        u = float(np.asarray(action).reshape(-1)[0])
        if not np.isfinite(u):
            raise ValueError("non-finite action")
        if abs(u) > self.max_torque:
            log.warning("pendulum action %.4f outside [-%.1f, %.1f]; clipping",
                        u, self.max_torque, self.max_torque)
            u = float(np.clip(u, -self.max_torque, self.max_torque))
        th_norm = ((self.theta + np.pi) % (2.0 * np.pi)) - np.pi
        reward = -(th_norm ** 2 + 0.1 * self.omega ** 2 + 0.001 * u ** 2)
        dt = self.spec.dt
        acc = 3.0 * self.g / (2.0 * self.l) * np.sin(self.theta) + 3.0 / (self.m * self.l ** 2) * u
        self.omega = float(np.clip(self.omega + acc * dt, -self.max_speed, self.max_speed))
        self.theta = self.theta + self.omega * dt
        self.steps += 1
        truncated = self.steps >= self.spec.max_episode_steps
        return self._obs(), float(reward), False, truncated


class ChainLqrEnv:
    """m carts on a line, each pulled toward its neighbours.

    State (p_1..p_m, v_1..v_m), action u in [-1, 1]^m. Position update first
    (p += dt*v), then velocity from the updated positions, so the dynamics
    are exactly x' = A x + B u with the blocks assembled in `dynamics`.
    Reward -(|p|^2 + 0.1|v|^2 + 0.01|u|^2), start uniform in [-1, 1]^{2m}.
    """

    kappa = 0.5

    def __init__(self, m: int):
        if m < 1:
            raise ValueError("need at least one cart")
        self.m = m
        self.spec = EnvSpec(f"chain-lqr-{m}", 2 * m, m, np.ones(m), 200, 0.05)
        self.x = np.zeros(2 * m)
        self.steps = 0

    def dynamics(self) -> tuple[Array, Array]:
        """Exact (A, B) of the one-step update x' = A x + B u."""
        m, dt = self.m, self.spec.dt
        coup = np.zeros((m, m))
        for i in range(m):
            if i > 0:
                coup[i, i - 1] += self.kappa
                coup[i, i] -= self.kappa
            if i < m - 1:
                coup[i, i + 1] += self.kappa
                coup[i, i] -= self.kappa
        eye = np.eye(m)
        a = np.block([[eye, dt * eye],
                      [dt * coup, eye + dt * dt * coup]])
        b = np.vstack([np.zeros((m, m)), dt * eye])
        return a, b

    def cost_matrices(self) -> tuple[Array, Array]:
        q = np.diag(np.concatenate([np.ones(self.m), 0.1 * np.ones(self.m)]))
        r = 0.01 * np.eye(self.m)
        return q, r

    def reset(self, seed=None) -> Array:
        rng = _as_rng(seed)
        self.x = rng.uniform(-1.0, 1.0, size=2 * self.m)
        self.steps = 0
        return self.x.copy()

    def set_state(self, x: Array) -> Array:
        self.x = np.asarray(x, dtype=np.float64).copy()
        self.steps = 0
        return self.x.copy()

    def step(self, action: Array):
        u = np.asarray(action, dtype=np.float64).reshape(-1)
        if u.shape[0] != self.m:
            raise ValueError(f"action has {u.shape[0]} dims, need {self.m}")
        if not np.isfinite(u).all():
            raise ValueError("non-finite action")
        if (np.abs(u) > 1.0 + 1e-12).any():
            log.warning("chain-lqr action outside [-1, 1]; clipping")
            u = np.clip(u, -1.0, 1.0)
        p = self.x[:self.m]
        v = self.x[self.m:]
        reward = -(p @ p + 0.1 * (v @ v) + 0.01 * (u @ u))
        dt = self.spec.dt
        p_new = p + dt * v
        pull = np.zeros(self.m)
        pull += np.where(np.arange(self.m) > 0,
                         self.kappa * (np.roll(p_new, 1) - p_new), 0.0)
        pull += np.where(np.arange(self.m) < self.m - 1,
                         self.kappa * (np.roll(p_new, -1) - p_new), 0.0)
        v_new = v + dt * (u + pull)
        self.x = np.concatenate([p_new, v_new])
        self.steps += 1
        truncated = self.steps >= self.spec.max_episode_steps
        return self.x.copy(), float(reward), False, truncated


def solve_dare(a: Array, b: Array, q: Array, r: Array,
               tol: float = 1e-10, max_iter: int = 100_000) -> Array:
    """Discrete-time algebraic Riccati fixed point by backward iteration.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA until the sup-norm
    change drops below tol.
    """
    p = q.copy()
    for _ in range(max_iter):
        btp = b.T @ p
        gain = np.linalg.solve(r + btp @ b, btp @ a)
        p_next = q + a.T @ p @ a - a.T @ p @ b @ gain
        p_next = 0.5 * (p_next + p_next.T)
        if np.max(np.abs(p_next - p)) < tol:
            return p_next
        p = p_next
    raise RuntimeError(f"Riccati iteration did not converge in {max_iter} steps")


def lqr_gain(env: ChainLqrEnv) -> Array:
    """Optimal state-feedback gain K for u = -K x."""
    a, b = env.dynamics()
    q, r = env.cost_matrices()
    p = solve_dare(a, b, q, r)
    return np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)


def rollout_lqr(env: ChainLqrEnv, gain: Array, x0: Array) -> float:
    """Episode return of the clipped controller u = clip(-K x) from x0."""
    env.set_state(x0)
    total = 0.0
    while True:
        u = np.clip(-gain @ env.x, -1.0, 1.0)
        _, reward, done, truncated = env.step(u)
        total += reward
        if done or truncated:
            return total


def lqr_optimal_return(env: ChainLqrEnv, episodes: int, seed: int) -> float:
    """Mean episodic return of the Riccati-optimal clipped controller.

    Resets are seeded as (seed, episode index); pair with the same scheme on
    the evaluation side to compare a learned policy on identical starts.
    """
    gain = lqr_gain(env)
    returns = []
    for k in range(episodes):
        x0 = env.reset(seed=(seed, k))
        returns.append(rollout_lqr(env, gain, x0))
    return float(np.mean(returns))


def export_lqr_checkpoint(env_id: str, path: str) -> None:
    """Write the Riccati controller as a linear-gain document for `eval`."""
    import json

    env = make_env(env_id)
    if not isinstance(env, ChainLqrEnv):
        raise ValueError(f"{env_id!r} is not a linear-quadratic environment")
    doc = {
        "format": "dagsac-checkpoint-v1",
        "kind": "linear-gain",
        "env": env_id,
        "gain": [list(map(float, row)) for row in lqr_gain(env)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


ENV_BUILDERS = {
    "pendulum": PendulumEnv,
    "chain-lqr-3": lambda: ChainLqrEnv(3),
    "chain-lqr-6": lambda: ChainLqrEnv(6),
}


def make_env(env_id: str):
    try:
        return ENV_BUILDERS[env_id]()
    except KeyError:
        raise ValueError(f"unknown env {env_id!r}; have {sorted(ENV_BUILDERS)}") from None
