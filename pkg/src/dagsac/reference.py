"""Straight-line single-policy soft actor-critic, used as a cross-check.

This is a deliberately independent rewrite of the degenerate one-node case:
one Gaussian actor over the whole action vector, no graph machinery. Given
the same seed it must track the factored agent bit for bit, so it draws from
identically constructed RNG streams and applies the same update order
(q1, q2, v, policy, target smoothing).
"""

from __future__ import annotations

import numpy as np

from .agent import ReplayBuffer, TrainConfig, Transition, rng_streams
from .mlp import (
    adam_init,
    adam_step,
    mlp_backward,
    mlp_forward,
    mlp_init,
    mlp_input_grad,
)
from .policy import JointAction, LOG_STD_MAX, LOG_STD_MIN

Array = np.ndarray

_LOG_SQRT_2PI = 0.5 * float(np.log(2.0 * np.pi))
_LOG2 = float(np.log(2.0))


class ReferenceSacAgent:
    """Plain SAC with a single tanh-Gaussian policy head."""

    def __init__(self, env_spec, config: TrainConfig):
        cfg = config.validate()
        self.spec = env_spec
        self.config = cfg
        self.streams = rng_streams(cfg.seed)
        init_rng = self.streams["init"]
        ds, da = env_spec.state_dim, env_spec.action_dim
        hid = cfg.hidden_sizes
        self.pi = mlp_init([ds, *hid, 2 * da], init_rng)
        self.v = mlp_init([ds, *hid, 1], init_rng)
        self.q1 = mlp_init([ds + da, *hid, 1], init_rng)
        self.q2 = mlp_init([ds + da, *hid, 1], init_rng)
        self.v_target = self.v.copy()
        self.bounds = np.asarray(env_spec.action_bounds, dtype=np.float64)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, ds, da, self.streams["replay"])
        self.adam = {"q1": adam_init(self.q1), "q2": adam_init(self.q2),
                     "v": adam_init(self.v), "pi": adam_init(self.pi)}
        self.updates_done = 0

    # -- sampling -----------------------------------------------------------

    def _heads(self, states: Array):
        out, cache = mlp_forward(self.pi, states)
        da = self.bounds.shape[0]
        mu = out[:, :da]
        raw = out[:, da:]
        ell = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mu, raw, ell, np.exp(ell), cache

    def _log_prob_rows(self, eps, ell, u):
        corr = 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))
        return (-0.5 * eps * eps - ell - _LOG_SQRT_2PI - corr
                - np.log(self.bounds)).sum(axis=1)

    def _sample(self, states: Array, rng) -> tuple[Array, Array]:
        batch = states.shape[0]
        da = self.bounds.shape[0]
        if batch == 1:
            eps = rng.standard_normal(da)[None, :]
        else:
            eps = rng.standard_normal((batch, da))
        mu, _, ell, sigma, _ = self._heads(states)
        u = mu + sigma * eps
        return np.tanh(u) * self.bounds, self._log_prob_rows(eps, ell, u)

    def act(self, state: Array, mode: str = "stochastic") -> JointAction:
        if mode == "stochastic":
            a, logp = self._sample(state[None, :], self.streams["act"])
            return JointAction(a[0], np.zeros_like(a[0]), {"t1": float(logp[0])})
        if mode == "uniform_random":
            unit = self.streams["act"].uniform(-1.0, 1.0, size=self.bounds.shape[0])
            action = unit * self.bounds
            safe = np.clip(unit, -1.0 + 1e-12, 1.0 - 1e-12)
            return JointAction(action, np.arctanh(safe),
                               {"t1": float(-np.sum(np.log(2.0 * self.bounds)))})
        mu, _, _, _, _ = self._heads(state[None, :])
        return JointAction(np.tanh(mu[0]) * self.bounds, None, {})

    def observe(self, t: Transition) -> None:
        self.buffer.push(t)

    # -- updates ------------------------------------------------------------

    def _q_forward(self, net, states, actions):
        out, cache = mlp_forward(net, np.concatenate([states, actions], axis=1))
        return out[:, 0], cache

    def update(self):
        cfg = self.config
        if self.buffer.size < cfg.batch_size:
            raise RuntimeError("warmup incomplete")
        batch = self.buffer.sample(cfg.batch_size)
        s, a = batch["s"], batch["a"]
        n = cfg.batch_size

        # twin Q regression onto r + gamma * (1 - done) * V_target(s')
        v_next, _ = mlp_forward(self.v_target, batch["s_next"])
        y = cfg.reward_scale * batch["r"] + cfg.gamma * (1.0 - batch["done"]) * v_next[:, 0]
        for name, net in (("q1", self.q1), ("q2", self.q2)):
            pred, cache = self._q_forward(net, s, a)
            resid = pred - y
            grad = mlp_backward(net, cache, (resid / n)[:, None])
            if cfg.lr_q > 0:
                adam_step(net, grad, self.adam[name], cfg.lr_q)

        # value regression onto min-Q at a fresh sample minus log-prob
        a_fresh, logp = self._sample(s, self.streams["update"])
        qf1, _ = self._q_forward(self.q1, s, a_fresh)
        qf2, _ = self._q_forward(self.q2, s, a_fresh)
        target = np.minimum(qf1, qf2) - logp
        pred, cache = mlp_forward(self.v, s)
        resid = pred[:, 0] - target
        grad_v = mlp_backward(self.v, cache, (resid / n)[:, None])
        if cfg.lr_v > 0:
            adam_step(self.v, grad_v, self.adam["v"], cfg.lr_v)

        # reparameterized policy loss
        da = self.bounds.shape[0]
        eps = self.streams["update"].standard_normal((n, da))
        mu, raw, ell, sigma, pi_cache = self._heads(s)
        u = mu + sigma * eps
        t = np.tanh(u)
        a_pi = t * self.bounds
        logp_rows = self._log_prob_rows(eps, ell, u)
        p1, c1 = self._q_forward(self.q1, s, a_pi)
        p2, c2 = self._q_forward(self.q2, s, a_pi)
        use1 = p1 <= p2
        q_min = np.where(use1, p1, p2)
        g1 = mlp_input_grad(self.q1, c1, use1[:, None].astype(np.float64))
        g2 = mlp_input_grad(self.q2, c2, (~use1)[:, None].astype(np.float64))
        dq_da = (g1 + g2)[:, s.shape[1]:]
        loss_pi = float(np.mean(logp_rows - q_min))
        g_action = -dq_da / n
        w = 1.0 / n
        g_u = g_action * self.bounds * (1.0 - t * t) + w * 2.0 * t
        g_ell = g_u * sigma * eps - w
        mask = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
        g_out = np.concatenate([g_u, g_ell * mask], axis=1)
        grad_pi = mlp_backward(self.pi, pi_cache, g_out)
        if cfg.lr_pi > 0:
            adam_step(self.pi, grad_pi, self.adam["pi"], cfg.lr_pi)

        self.updates_done += 1
        if self.updates_done % cfg.target_update_interval == 0:
            tau = cfg.tau
            for (w_, b_), (tw, tb) in zip(self.v.layers, self.v_target.layers):
                tw *= 1.0 - tau
                tw += tau * w_
                tb *= 1.0 - tau
                tb += tau * b_
        return loss_pi
