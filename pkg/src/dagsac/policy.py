"""Factored Gaussian actors over an action graph.

Each graph node owns a sub-policy: an MLP mapping (state ++ parents' sampled
actions) to a mean and log-std per owned action dimension. Sampling walks the
graph in topological order, squashes each Gaussian draw through tanh, scales
to the per-dimension bound, and records the exact log-density including the
tanh change-of-variables correction.

Gradients are computed by hand. The backward pass walks nodes in reverse
topological order so that gradients flow from a child's input back into its
ancestors' parameters (switchable off via detach_parent_actions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import ActionGraph, parent_action_width
from .mlp import Grad, Mlp, mlp_backward, mlp_forward, mlp_init

Array = np.ndarray

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG2 = float(np.log(2.0))
_LOG_SQRT_2PI = 0.5 * float(np.log(2.0 * np.pi))


def tanh_log_jacobian(u: Array) -> Array:
    """log(1 - tanh(u)^2), evaluated stably for large |u|."""
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


@dataclass
class SubPolicy:
    node_id: str
    net: Mlp  # output width 2*d: means first, raw log-stds second


@dataclass
class JointAction:
    action: Array                        # (A,), strictly inside bounds
    pre_squash: Array | None             # (A,), Gaussian draws before tanh
    per_node_log_prob: dict[str, float]  # one entry per graph node

    @property
    def mean_log_prob(self) -> float:
        return sum(self.per_node_log_prob.values()) / len(self.per_node_log_prob)


class FactoredPolicy:
    """One SubPolicy per graph node plus the wiring needed to sample jointly."""

    def __init__(self, graph: ActionGraph, state_dim: int, bounds: Array,
                 subs: dict[str, SubPolicy], detach_parent_actions: bool = False):
        if set(subs) != set(graph.nodes):
            raise ValueError("sub-policy keys must match graph node ids exactly")
        self.graph = graph
        self.state_dim = state_dim
        self.bounds = np.asarray(bounds, dtype=np.float64)
        self.subs = subs
        self.detach_parent_actions = detach_parent_actions
        self.topo = list(graph._topo)
        self.dims = {nid: np.array(graph.nodes[nid].action_dims) for nid in self.topo}
        self.scales = {nid: self.bounds[self.dims[nid]] for nid in self.topo}
        self.parent_order = {nid: graph.parents_in_topo_order(nid) for nid in self.topo}

    @property
    def n_nodes(self) -> int:
        return len(self.topo)

    def nets(self) -> dict[str, Mlp]:
        return {nid: self.subs[nid].net for nid in self.topo}


def init_policies(graph: ActionGraph, state_dim: int, bounds: Array,
                  hidden: tuple[int, ...], rng: np.random.Generator,
                  detach_parent_actions: bool = False) -> FactoredPolicy:
    """Build one sub-policy per node, sized from the graph wiring.

    Networks are initialized in topological node order so a fixed seed gives
    a reproducible parameter set.
    """
    bounds = np.asarray(bounds, dtype=np.float64)
    subs = {}
    for nid in graph._topo:
        d = len(graph.nodes[nid].action_dims)
        in_dim = state_dim + parent_action_width(graph, nid)
        net = mlp_init([in_dim, *hidden, 2 * d], rng)
        subs[nid] = SubPolicy(nid, net)
    return FactoredPolicy(graph, state_dim, bounds, subs, detach_parent_actions)


def _node_forward(ps: FactoredPolicy, states: Array, eps: dict[str, Array] | None):
    """Walk the graph once over a batch of states.

    eps maps node id to (B, d) standard-normal draws; None means the
    deterministic mean path. Returns per-node intermediates plus the
    assembled (B, A) action matrix and per-node log-prob rows.
    """
    batch = states.shape[0]
    data: dict[str, dict] = {}
    actions = np.empty((batch, ps.bounds.shape[0]))
    pre = np.empty_like(actions)
    for nid in ps.topo:
        parents = ps.parent_order[nid]
        if parents:
            x = np.concatenate([states] + [data[p]["a"] for p in parents], axis=1)
        else:
            x = states
        out, cache = mlp_forward(ps.subs[nid].net, x)
        if not np.isfinite(out).all():
            raise ValueError(f"non-finite network output at node {nid!r}")
        d = len(ps.dims[nid])
        mu = out[:, :d]
        raw = out[:, d:]
        ell = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        sigma = np.exp(ell)
        e = eps[nid] if eps is not None else np.zeros_like(mu)
        u = mu + sigma * e
        t = np.tanh(u)
        a = t * ps.scales[nid]
        logp = (-0.5 * e * e - ell - _LOG_SQRT_2PI
                - tanh_log_jacobian(u) - np.log(ps.scales[nid])).sum(axis=1)
        data[nid] = {"x": x, "cache": cache, "mu": mu, "raw": raw, "ell": ell,
                     "sigma": sigma, "eps": e, "u": u, "t": t, "a": a, "logp": logp}
        actions[:, ps.dims[nid]] = a
        pre[:, ps.dims[nid]] = u
    mean_logp = sum(data[nid]["logp"] for nid in ps.topo) / ps.n_nodes
    return data, actions, pre, mean_logp


def draw_eps(ps: FactoredPolicy, batch: int, rng: np.random.Generator) -> dict[str, Array]:
    """Standard-normal draws per node, consumed in topological order."""
    out = {}
    for nid in ps.topo:
        d = len(ps.dims[nid])
        if batch == 1:
            out[nid] = rng.standard_normal(d)[None, :]
        else:
            out[nid] = rng.standard_normal((batch, d))
    return out


def sample_joint(ps: FactoredPolicy, state: Array, rng: np.random.Generator) -> JointAction:
    """Draw one joint action with its exact per-node log-densities."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape[0] != ps.state_dim:
        raise ValueError(f"state has {state.shape[0]} dims, policies expect {ps.state_dim}")
    eps = draw_eps(ps, 1, rng)
    data, actions, pre, _ = _node_forward(ps, state[None, :], eps)
    per_node = {nid: float(data[nid]["logp"][0]) for nid in ps.topo}
    return JointAction(actions[0], pre[0], per_node)


def sample_actions_batch(ps: FactoredPolicy, states: Array,
                         rng: np.random.Generator) -> tuple[Array, Array]:
    """Fresh joint actions for a batch of states: (actions (B, A), mean log-prob (B,))."""
    eps = draw_eps(ps, states.shape[0], rng)
    _, actions, _, mean_logp = _node_forward(ps, states, eps)
    return actions, mean_logp


def deterministic_action(ps: FactoredPolicy, state: Array) -> Array:
    """Mean-path action: tanh(mu) scaled to bounds, no noise."""
    state = np.asarray(state, dtype=np.float64)
    _, actions, _, _ = _node_forward(ps, state[None, :], None)
    return actions[0]


def log_prob_joint(ps: FactoredPolicy, state: Array,
                   action: JointAction) -> tuple[float, dict[str, float]]:
    """Exact log-density of a previously sampled joint action.

    Requires the stored pre-squash draws: inverting tanh near the bound is
    numerically hopeless, so their absence is a contract error.
    """
    if action.pre_squash is None:
        raise ValueError("JointAction lacks pre_squash; cannot recompute log-probs")
    state = np.asarray(state, dtype=np.float64)[None, :]
    per_node: dict[str, float] = {}
    for nid in ps.topo:
        parents = ps.parent_order[nid]
        cols = [state] + [action.action[ps.dims[p]][None, :] for p in parents]
        x = np.concatenate(cols, axis=1) if parents else state
        out, _ = mlp_forward(ps.subs[nid].net, x)
        d = len(ps.dims[nid])
        mu = out[:, :d]
        ell = np.clip(out[:, d:], LOG_STD_MIN, LOG_STD_MAX)
        sigma = np.exp(ell)
        u = action.pre_squash[ps.dims[nid]][None, :]
        z = (u - mu) / sigma
        logp = (-0.5 * z * z - ell - _LOG_SQRT_2PI
                - tanh_log_jacobian(u) - np.log(ps.scales[nid])).sum()
        per_node[nid] = float(logp)
    mean = sum(per_node.values()) / len(per_node)
    return mean, per_node


def policy_loss_value(ps: FactoredPolicy, q_min_fn, states: Array,
                      eps: dict[str, Array]) -> float:
    """Loss evaluation only (used by finite-difference checks)."""
    _, actions, _, mean_logp = _node_forward(ps, states, eps)
    q, _ = q_min_fn(states, actions)
    return float(np.mean(mean_logp - q))


def _backward_nodes(ps: FactoredPolicy, data: dict, g_action: dict[str, Array],
                    logp_weights: dict[str, float]) -> dict[str, Grad]:
    """Reverse walk of the sampling graph.

    g_action[nid] carries d(loss)/d(action slice) arriving from outside the
    policy (e.g. a Q network); logp_weights[nid] is the coefficient of that
    node's log-prob rows in the scalar loss. Gradients flow from children
    into parents through sampled actions unless detach_parent_actions is set.
    """
    grads: dict[str, Grad] = {}
    for nid in reversed(ps.topo):
        nd = data[nid]
        t = nd["t"]
        w = logp_weights[nid]
        g_u = g_action[nid] * ps.scales[nid] * (1.0 - t * t) + w * 2.0 * t
        g_mu = g_u
        g_ell = g_u * nd["sigma"] * nd["eps"] - w
        mask = (nd["raw"] > LOG_STD_MIN) & (nd["raw"] < LOG_STD_MAX)
        g_out = np.concatenate([g_mu, g_ell * mask], axis=1)
        grad = mlp_backward(ps.subs[nid].net, nd["cache"], g_out)
        grads[nid] = grad
        if not ps.detach_parent_actions:
            off = ps.state_dim
            for p in ps.parent_order[nid]:
                dp = len(ps.dims[p])
                g_action[p] = g_action[p] + grad.input_grad[:, off:off + dp]
                off += dp
    return grads


def policy_loss_with_noise(ps: FactoredPolicy, q_min_fn, states: Array,
                           eps: dict[str, Array]):
    """Loss and per-node parameter gradients for frozen noise draws.

    q_min_fn(states, actions) must return (q values (B,), dq/daction (B, A)).
    Returns (loss, {node: Grad}, mean_logp rows).
    """
    batch = states.shape[0]
    m = ps.n_nodes
    data, actions, _, mean_logp = _node_forward(ps, states, eps)
    q, dq_da = q_min_fn(states, actions)
    loss = float(np.mean(mean_logp - q))
    if not np.isfinite(loss):
        bad = int(np.flatnonzero(~np.isfinite(mean_logp - q))[0])
        raise ValueError(f"non-finite policy loss at batch index {bad}")
    # d(loss)/d(action): only the -Q term touches actions directly
    g_action = {nid: -dq_da[:, ps.dims[nid]] / batch for nid in ps.topo}
    weights = {nid: 1.0 / (m * batch) for nid in ps.topo}
    grads = _backward_nodes(ps, data, g_action, weights)
    return loss, grads, mean_logp


def log_prob_sum_grads(ps: FactoredPolicy, states: Array, eps: dict[str, Array],
                       node_weights: dict[str, float]):
    """Gradients of sum_b sum_i weight_i * logp_{i,b} with no Q term.

    Setting one weight to 1 and the rest to 0 isolates a single node's
    log-prob gradient (which still reaches ancestor parameters through the
    sampled parent actions).
    """
    data, _, _, _ = _node_forward(ps, states, eps)
    zeros = {nid: np.zeros((states.shape[0], len(ps.dims[nid]))) for nid in ps.topo}
    logps = {nid: data[nid]["logp"].copy() for nid in ps.topo}
    return _backward_nodes(ps, data, zeros, dict(node_weights)), logps


def policy_loss(ps: FactoredPolicy, q_min_fn, states: Array,
                rng: np.random.Generator):
    """Reparameterized actor loss: mean over the batch of
    (mean sub-log-prob - min-Q at a fresh joint sample)."""
    if states.shape[0] == 0:
        raise ValueError("empty batch")
    eps = draw_eps(ps, states.shape[0], rng)
    return policy_loss_with_noise(ps, q_min_fn, states, eps)
