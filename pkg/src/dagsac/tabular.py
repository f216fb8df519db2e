"""Exact soft policy iteration on finite MDPs with factored actions.

The joint action space is a product over graph nodes; policies factorize as
one conditional table per node (conditioned on the node's parents' actions).
Everything is dense float64 and exact up to float rounding, which is what lets
the convergence, monotone-improvement, and optimality certificates be checked
by brute force.

The entropy bonus weights the joint entropy by 1/m (m = node count), matching
the mean-of-sub-log-probs convention used by the neural losses; consistently,
the improvement target is the Boltzmann distribution softmax(m * Q).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


@dataclass
class TabularMdp:
    """Finite MDP whose joint action is a product over factored nodes.

    node_sizes[i] is the number of actions at node i; node_parents[i] lists
    parent node indices, each strictly smaller than i (nodes are given in
    topological order). Joint actions are indexed row-major over node axes.
    """

    n_states: int
    node_sizes: list[int]
    node_parents: list[list[int]]
    transitions: Array  # (S, K, S), rows sum to 1
    rewards: Array      # (S, K)
    gamma: float

    def __post_init__(self):
        if len(self.node_sizes) != len(self.node_parents):
            raise ValueError("node_sizes and node_parents disagree")
        for i, parents in enumerate(self.node_parents):
            if any(p >= i or p < 0 for p in parents):
                raise ValueError(f"node {i} parents {parents} must be earlier nodes")
        k = int(np.prod(self.node_sizes))
        if self.transitions.shape != (self.n_states, k, self.n_states):
            raise ValueError(f"transitions must be shaped ({self.n_states}, {k}, {self.n_states})")
        if self.rewards.shape != (self.n_states, k):
            raise ValueError(f"rewards must be shaped ({self.n_states}, {k})")
        if (self.transitions < 0).any():
            raise ValueError("negative transition probability")
        row_sums = self.transitions.sum(axis=2)
        if np.abs(row_sums - 1.0).max() > 1e-12:
            raise ValueError("transition rows must sum to 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")

    @property
    def n_nodes(self) -> int:
        return len(self.node_sizes)

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.node_sizes))


@dataclass
class FactorizedTabularPolicy:
    """One conditional table per node.

    tables[i] has shape (S, k_{p1}, ..., k_{pj}, k_i) with parent axes in
    increasing node order; the last axis sums to 1.
    """

    node_sizes: list[int]
    node_parents: list[list[int]]
    tables: list[Array]

    def __post_init__(self):
        for i, t in enumerate(self.tables):
            want = tuple([t.shape[0]] + [self.node_sizes[p] for p in self.node_parents[i]]
                         + [self.node_sizes[i]])
            if t.shape != want:
                raise ValueError(f"node {i} table shaped {t.shape}, want {want}")
            sums = t.sum(axis=-1)
            if np.abs(sums - 1.0).max() > 1e-12:
                raise ValueError(f"node {i} conditionals must sum to 1")


def uniform_policy(mdp: TabularMdp) -> FactorizedTabularPolicy:
    tables = []
    for i in range(mdp.n_nodes):
        shape = tuple([mdp.n_states] + [mdp.node_sizes[p] for p in mdp.node_parents[i]]
                      + [mdp.node_sizes[i]])
        tables.append(np.full(shape, 1.0 / mdp.node_sizes[i]))
    return FactorizedTabularPolicy(mdp.node_sizes, mdp.node_parents, tables)


def random_policy(mdp: TabularMdp, rng: np.random.Generator) -> FactorizedTabularPolicy:
    tables = []
    for i in range(mdp.n_nodes):
        shape = tuple([mdp.n_states] + [mdp.node_sizes[p] for p in mdp.node_parents[i]]
                      + [mdp.node_sizes[i]])
        t = rng.uniform(0.1, 1.0, size=shape)
        tables.append(t / t.sum(axis=-1, keepdims=True))
    return FactorizedTabularPolicy(mdp.node_sizes, mdp.node_parents, tables)


def joint_policy_probs(policy: FactorizedTabularPolicy, s: int) -> Array:
    """Joint distribution over all joint actions at state s (flat, row-major)."""
    sizes = policy.node_sizes
    m = len(sizes)
    joint = np.ones(tuple(sizes))
    for i in range(m):
        cond = policy.tables[i][s]  # axes: sorted parents (< i), then own
        keep = sorted(policy.node_parents[i]) + [i]
        shape = tuple(sizes[j] if j in keep else 1 for j in range(m))
        joint *= cond.reshape(shape)
    return joint.reshape(-1)


def joint_policy_table(policy: FactorizedTabularPolicy, n_states: int) -> Array:
    """(S, K) joint table; rows sum to 1."""
    return np.stack([joint_policy_probs(policy, s) for s in range(n_states)])


def _entropy_rows(joint: Array) -> Array:
    """Per-state entropy of the joint policy; 0*log(0) treated as 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(joint > 0.0, joint * np.log(joint), 0.0)
    return -terms.sum(axis=1)


def backup(mdp: TabularMdp, joint: Array, entropy: Array, q: Array) -> Array:
    """One application of the soft Bellman operator for a fixed policy."""
    alpha = 1.0 / mdp.n_nodes
    v = (joint * q).sum(axis=1) + alpha * entropy
    return mdp.rewards + mdp.gamma * (mdp.transitions @ v)


def soft_policy_evaluation(mdp: TabularMdp, policy: FactorizedTabularPolicy,
                           tol: float, q0: Array | None = None,
                           max_iter: int = 1_000_000) -> tuple[Array, int]:
    """Iterate the entropy-augmented backup to its fixed point.

    Returns (Q table, iteration count). Contraction at rate gamma guarantees
    termination for tol > 0.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    joint = joint_policy_table(policy, mdp.n_states)
    entropy = _entropy_rows(joint)
    q = np.zeros((mdp.n_states, mdp.n_joint)) if q0 is None else q0.copy()
    for it in range(1, max_iter + 1):
        q_next = backup(mdp, joint, entropy, q)
        if np.max(np.abs(q_next - q)) < tol:
            return q_next, it
        q = q_next
    raise RuntimeError("policy evaluation did not converge")


def soft_policy_improvement(mdp: TabularMdp, q: Array) -> FactorizedTabularPolicy:
    """Project the Boltzmann distribution softmax(m*Q) onto the factored form.

    The joint target is computed exactly (log-sum-exp guarded), then each
    node's conditional is the target's conditional given that node's parents.
    """
    if not np.isfinite(q).all():
        raise ValueError("Q table must be finite")
    m = mdp.n_nodes
    scaled = m * q
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    b = np.exp(scaled)
    b /= b.sum(axis=1, keepdims=True)
    b_full = b.reshape(tuple([mdp.n_states] + list(mdp.node_sizes)))
    tables = []
    for i in range(m):
        keep = sorted(mdp.node_parents[i]) + [i]
        drop = tuple(1 + ax for ax in range(m) if ax not in keep)
        marg = b_full.sum(axis=drop) if drop else b_full.copy()
        # axes are now (state, sorted parents..., own): parents precede the
        # node in topological indexing, so the own axis already sits last
        denom = marg.sum(axis=-1, keepdims=True)
        # a parent combination the joint never reaches (mass underflowed to
        # zero) leaves its conditional unconstrained; pin it to uniform
        k_i = mdp.node_sizes[i]
        cond = np.where(denom > 0.0, marg / np.where(denom > 0.0, denom, 1.0), 1.0 / k_i)
        tables.append(cond)
    return FactorizedTabularPolicy(mdp.node_sizes, mdp.node_parents, tables)


@dataclass
class IterationResult:
    q: Array
    policy: FactorizedTabularPolicy
    iterations: int
    # per improvement step: min over (s, A) of Q^{pi_{k+1}} - Q^{pi_k}
    monotonicity: list[float] = field(default_factory=list)


def soft_policy_iteration(mdp: TabularMdp, tol: float,
                          max_iter: int = 10_000,
                          eval_tol: float = 1e-13) -> IterationResult:
    """Alternate exact evaluation and Boltzmann improvement to convergence.

    Stops when the max conditional-table change drops below tol; raises with
    the residual trace if the iteration cap is exceeded. The monotonicity
    list certifies that no improvement step decreased Q anywhere (up to
    float slack).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    policy = uniform_policy(mdp)
    q, _ = soft_policy_evaluation(mdp, policy, eval_tol)
    certificates: list[float] = []
    residuals: list[float] = []
    for it in range(1, max_iter + 1):
        new_policy = soft_policy_improvement(mdp, q)
        change = max(np.max(np.abs(n - o))
                     for n, o in zip(new_policy.tables, policy.tables))
        residuals.append(float(change))
        q_new, _ = soft_policy_evaluation(mdp, new_policy, eval_tol, q0=q)
        certificates.append(float(np.min(q_new - q)))
        policy, q = new_policy, q_new
        if change < tol:
            return IterationResult(q, policy, it, certificates)
    raise RuntimeError(
        f"soft policy iteration hit the {max_iter}-step cap; "
        f"last residuals {residuals[-5:]}"
    )


def random_mdp(rng: np.random.Generator, n_states: int,
               node_sizes: list[int], node_parents: list[list[int]],
               gamma: float) -> TabularMdp:
    """Random dense MDP with the given factored action structure."""
    k = int(np.prod(node_sizes))
    trans = rng.uniform(0.05, 1.0, size=(n_states, k, n_states))
    trans /= trans.sum(axis=2, keepdims=True)
    rewards = rng.uniform(-1.0, 1.0, size=(n_states, k))
    return TabularMdp(n_states, node_sizes, node_parents, trans, rewards, gamma)
