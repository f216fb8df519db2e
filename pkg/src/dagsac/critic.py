"""Soft value network, Polyak-averaged target, and twin Q networks.

Targets follow the soft actor-critic value decomposition: the state value
regresses onto min(Q1, Q2) at a fresh policy sample minus the mean
sub-policy log-prob (a single-sample estimate of the entropy-augmented
value), and the Q networks regress onto reward plus the discounted target
value of the next state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import Grad, Mlp, mlp_backward, mlp_forward, mlp_init, mlp_input_grad
from .policy import FactoredPolicy, sample_actions_batch

Array = np.ndarray


@dataclass
class CriticSet:
    v: Mlp
    v_target: Mlp
    q1: Mlp
    q2: Mlp
    gamma: float
    tau: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


def init_critics(state_dim: int, action_dim: int, hidden: tuple[int, ...],
                 gamma: float, tau: float, rng: np.random.Generator) -> CriticSet:
    """Networks are created in the order v, q1, q2; the target starts as a copy of v."""
    v = mlp_init([state_dim, *hidden, 1], rng)
    q1 = mlp_init([state_dim + action_dim, *hidden, 1], rng)
    q2 = mlp_init([state_dim + action_dim, *hidden, 1], rng)
    return CriticSet(v=v, v_target=v.copy(), q1=q1, q2=q2, gamma=gamma, tau=tau)


def _scalar_net(net: Mlp, x: Array) -> tuple[Array, object]:
    out, cache = mlp_forward(net, x)
    return out[:, 0], cache


def value_targets(critics: CriticSet, policies: FactoredPolicy, states: Array,
                  rng: np.random.Generator) -> tuple[Array, Array]:
    """Single-sample soft value targets min(Q1,Q2) - mean log-prob, per state.

    Also returns the mean log-prob rows (their negation is the entropy
    statistic reported in training logs). Constant w.r.t. every parameter.
    """
    actions, mean_logp = sample_actions_batch(policies, states, rng)
    xa = np.concatenate([states, actions], axis=1)
    q1, _ = _scalar_net(critics.q1, xa)
    q2, _ = _scalar_net(critics.q2, xa)
    targets = np.minimum(q1, q2) - mean_logp
    if not np.isfinite(targets).all():
        bad = int(np.flatnonzero(~np.isfinite(targets))[0])
        raise ValueError(f"non-finite value target at batch index {bad}")
    return targets, mean_logp


def soft_value_target(critics: CriticSet, policies: FactoredPolicy, state: Array,
                      rng: np.random.Generator) -> float:
    targets, _ = value_targets(critics, policies, np.asarray(state)[None, :], rng)
    return float(targets[0])


def value_loss(critics: CriticSet, policies: FactoredPolicy, states: Array,
               rng: np.random.Generator) -> tuple[float, Grad, Array]:
    """Mean squared residual of V against frozen soft targets.

    Returns (J_V, gradient on the value net, mean log-prob rows).
    """
    if states.shape[0] == 0:
        raise ValueError("empty batch")
    targets, mean_logp = value_targets(critics, policies, states, rng)
    pred, cache = _scalar_net(critics.v, states)
    resid = pred - targets
    loss = float(0.5 * np.mean(resid * resid))
    if not np.isfinite(loss):
        bad = int(np.flatnonzero(~np.isfinite(resid))[0])
        raise ValueError(f"non-finite value loss at batch index {bad}")
    upstream = (resid / states.shape[0])[:, None]
    return loss, mlp_backward(critics.v, cache, upstream), mean_logp


def q_targets(critics: CriticSet, rewards: Array, next_states: Array,
              done: Array, reward_scale: float) -> Array:
    """Soft Bellman regression targets: scaled reward plus discounted
    bootstrap from the target value net; terminal transitions (done, not
    time-limit truncations) mask the bootstrap."""
    v_next, _ = _scalar_net(critics.v_target, next_states)
    return reward_scale * rewards + critics.gamma * (1.0 - done) * v_next


def q_loss(critics: CriticSet, states: Array, actions: Array, rewards: Array,
           next_states: Array, done: Array, reward_scale: float
           ) -> tuple[float, float, Grad, Grad]:
    """Squared soft Bellman residual for each twin against shared targets."""
    if states.shape[0] == 0:
        raise ValueError("empty batch")
    y = q_targets(critics, rewards, next_states, done, reward_scale)
    xa = np.concatenate([states, actions], axis=1)
    losses = []
    grads = []
    for net in (critics.q1, critics.q2):
        pred, cache = _scalar_net(net, xa)
        resid = pred - y
        loss = float(0.5 * np.mean(resid * resid))
        if not np.isfinite(loss):
            bad = int(np.flatnonzero(~np.isfinite(resid))[0])
            raise ValueError(f"non-finite Q loss at batch index {bad}")
        losses.append(loss)
        grads.append(mlp_backward(net, cache, (resid / states.shape[0])[:, None]))
    return losses[0], losses[1], grads[0], grads[1]


def soft_update(critics: CriticSet) -> None:
    """Polyak smoothing: v_target <- tau*v + (1-tau)*v_target, elementwise."""
    tau = critics.tau
    for (w, b), (tw, tb) in zip(critics.v.layers, critics.v_target.layers):
        tw *= 1.0 - tau
        tw += tau * w
        tb *= 1.0 - tau
        tb += tau * b


def q_min_fn(critics: CriticSet):
    """Callable (states, actions) -> (min-Q values, d(minQ)/d(actions)).

    The gradient follows the per-sample argmin branch; ties go to q1.
    """
    def fn(states: Array, actions: Array) -> tuple[Array, Array]:
        xa = np.concatenate([states, actions], axis=1)
        p1, c1 = _scalar_net(critics.q1, xa)
        p2, c2 = _scalar_net(critics.q2, xa)
        use1 = p1 <= p2
        q = np.where(use1, p1, p2)
        g1 = mlp_input_grad(critics.q1, c1, use1[:, None].astype(np.float64))
        g2 = mlp_input_grad(critics.q2, c2, (~use1)[:, None].astype(np.float64))
        return q, (g1 + g2)[:, states.shape[1]:]
    return fn
