"""Certificate suite: convergence lemmas, gradient integrity, density checks.

Each check is a pure function of a root seed returning a CheckResult, so the
CLI `verify` subcommand and the acceptance tests share one implementation.
Oracles here are deliberately independent of the code paths they check:
finite differences against hand-derived backprop, Gauss-Legendre quadrature
against sampled densities, horizon-truncated forward propagation against
fixed-point iteration, and a straight-line SAC rewrite against the factored
agent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import policy as policy_mod
from .agent import Agent, TrainConfig, Transition
from .critic import init_critics, q_loss, q_min_fn, value_loss
from .envs import make_env
from .graph import parse_topology, single_node_graph
from .mlp import mlp_forward, params_to_vector, vector_to_params
from .policy import (
    FactoredPolicy,
    draw_eps,
    init_policies,
    log_prob_sum_grads,
    policy_loss_value,
    policy_loss_with_noise,
    sample_actions_batch,
)
from .reference import ReferenceSacAgent
from .tabular import (
    TabularMdp,
    joint_policy_table,
    random_mdp,
    random_policy,
    soft_policy_evaluation,
    soft_policy_iteration,
)

Array = np.ndarray


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# tabular certificates


def lemma1_evaluation_certificate(seed: int = 0, trials: int = 200) -> CheckResult:
    """Soft policy evaluation converges geometrically at rate <= gamma,
    and the fixed point matches a 200-step forward propagation."""
    rng = np.random.default_rng(seed)
    gammas = (0.5, 0.9, 0.99)
    worst_excess = -np.inf
    for trial in range(trials):
        gamma = gammas[trial % 3]
        n_states = int(rng.integers(2, 9))
        mdp = random_mdp(rng, n_states, [2, 2], [[], [0]], gamma)
        pol = random_policy(mdp, rng)
        joint = joint_policy_table(pol, mdp.n_states)
        entropy = -np.sum(joint * np.log(joint), axis=1)
        from .tabular import backup

        q = np.zeros((mdp.n_states, 4))
        prev = None
        for _ in range(400):
            q_next = backup(mdp, joint, entropy, q)
            res = float(np.max(np.abs(q_next - q)))
            if prev is not None and prev > 1e-11:
                worst_excess = max(worst_excess, res - gamma * prev)
            q = q_next
            prev = res
            if res < 1e-13:
                break
    ratio_ok = worst_excess <= 1e-12

    # 4-state chain, gamma 0.9: fixed point vs truncated forward propagation
    mdp = random_mdp(np.random.default_rng(seed + 1), 4, [2, 2], [[], [0]], 0.9)
    pol = random_policy(mdp, np.random.default_rng(seed + 2))
    q_fix, _ = soft_policy_evaluation(mdp, pol, tol=1e-14)
    q_trunc = _horizon_propagation(mdp, pol, horizon=200)
    gap = float(np.max(np.abs(q_trunc - q_fix)))
    passed = ratio_ok and gap < 1e-6
    return CheckResult(
        "lemma1-evaluation-convergence", passed,
        f"max residual-ratio excess {worst_excess:.2e} (<=1e-12), "
        f"horizon-200 gap {gap:.2e} (<1e-6), {trials} MDPs")


def _horizon_propagation(mdp: TabularMdp, pol, horizon: int) -> Array:
    """Q estimated by pushing the state distribution forward step by step."""
    joint = joint_policy_table(pol, mdp.n_states)
    entropy = -np.sum(joint * np.log(joint), axis=1)
    alpha = 1.0 / mdp.n_nodes
    exp_reward = np.sum(joint * mdp.rewards, axis=1)
    step_kernel = np.stack([joint[s] @ mdp.transitions[s] for s in range(mdp.n_states)])
    q = np.zeros((mdp.n_states, mdp.n_joint))
    for s in range(mdp.n_states):
        for a in range(mdp.n_joint):
            total = mdp.rewards[s, a]
            dist = mdp.transitions[s, a].copy()
            g = mdp.gamma
            for _ in range(horizon):
                total += g * float(dist @ (alpha * entropy + exp_reward))
                dist = dist @ step_kernel
                g *= mdp.gamma
            q[s, a] = total
    return q


def policy_iteration_certificates(seed: int = 0, n_mdps: int = 20,
                                  n_random_policies: int = 100
                                  ) -> tuple[CheckResult, CheckResult]:
    """Lemma 2 (monotone improvement) and Theorem 1 (iteration optimality)
    on random factored MDPs; one batch of runs feeds both certificates."""
    rng = np.random.default_rng(seed)
    worst_mono = np.inf
    worst_dom = np.inf
    iters = []
    for _ in range(n_mdps):
        n_states = int(rng.integers(2, 7))
        mdp = random_mdp(rng, n_states, [2, 2], [[], [0]], 0.9)
        res = soft_policy_iteration(mdp, tol=1e-8, max_iter=10_000)
        iters.append(res.iterations)
        worst_mono = min(worst_mono, min(res.monotonicity))
        for _ in range(n_random_policies):
            pol = random_policy(mdp, rng)
            q_pol, _ = soft_policy_evaluation(mdp, pol, tol=1e-13)
            worst_dom = min(worst_dom, float(np.min(res.q - q_pol)))
    lemma2 = CheckResult(
        "lemma2-monotone-improvement", worst_mono >= -1e-10,
        f"min Q-increase across all improvement steps {worst_mono:.2e} (>=-1e-10)")
    theorem1 = CheckResult(
        "theorem1-iteration-optimality",
        worst_dom >= -1e-8 and max(iters) < 10_000,
        f"min dominance margin over {n_mdps}x{n_random_policies} random policies "
        f"{worst_dom:.2e} (>=-1e-8), max iterations {max(iters)}")
    return lemma2, theorem1


# ---------------------------------------------------------------------------
# gradient certificates


def _rel_err(analytic: Array, fd: Array) -> float:
    denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-6)
    return float(np.max(np.abs(fd - analytic) / denom))


def _small_instance(rng: np.random.Generator, m_nodes: int):
    state_dim = 3
    if m_nodes == 1:
        graph = single_node_graph(2)
    else:
        graph = parse_topology(json.dumps({"nodes": [
            {"id": "t1", "action_dims": [0], "parents": []},
            {"id": "t2", "action_dims": [1, 2], "parents": ["t1"]},
        ]}))
    action_dim = graph.action_dim_total
    bounds = np.ones(action_dim)
    seed_rng = np.random.default_rng(rng.integers(2 ** 32))
    ps = init_policies(graph, state_dim, bounds, (6, 5), seed_rng)
    critics = init_critics(state_dim, action_dim, (6, 5), 0.99, 0.005, seed_rng)
    for net in ([ps.subs[n].net for n in ps.topo]
                + [critics.v, critics.v_target, critics.q1, critics.q2]):
        for w, b in net.layers:
            w *= 1.5
            b += 0.1 * seed_rng.standard_normal(b.shape)
    return ps, critics, state_dim, action_dim


def _fd_vector(f, net_get, net_set, h: float = 1e-5) -> Array:
    base = params_to_vector(net_get())
    fd = np.zeros_like(base)
    for k in range(base.size):
        vals = []
        for sign in (1.0, -1.0):
            vec = base.copy()
            vec[k] += sign * h
            net_set(vector_to_params(net_get(), vec))
            vals.append(f())
        fd[k] = (vals[0] - vals[1]) / (2.0 * h)
    net_set(vector_to_params(net_get(), base))
    return fd


def gradient_certificate_value(seed: int = 0, trials: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        ps, critics, ds, _ = _small_instance(rng, 1 + trial % 2)
        states = rng.standard_normal((5, ds))
        rng_seed = int(rng.integers(2 ** 32))
        _, grad, _ = value_loss(critics, ps, states, np.random.default_rng(rng_seed))
        analytic = np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in grad.layers])

        def loss():
            l, _, _ = value_loss(critics, ps, states, np.random.default_rng(rng_seed))
            return l

        fd = _fd_vector(loss, lambda: critics.v,
                        lambda n: setattr(critics, "v", n))
        worst = max(worst, _rel_err(analytic, fd))
    return CheckResult("gradient-value-loss", worst < 1e-4,
                       f"max relative error {worst:.2e} (<1e-4), {trials} instances")


def gradient_certificate_q(seed: int = 0, trials: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        ps, critics, ds, da = _small_instance(rng, 1 + trial % 2)
        n = 5
        s = rng.standard_normal((n, ds))
        a = rng.uniform(-0.9, 0.9, (n, da))
        r = rng.standard_normal(n)
        s2 = rng.standard_normal((n, ds))
        done = (rng.uniform(size=n) < 0.25).astype(float)
        which = "q1" if trial % 2 == 0 else "q2"
        _, _, g1, g2 = q_loss(critics, s, a, r, s2, done, reward_scale=3.0)
        grad = g1 if which == "q1" else g2
        analytic = np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in grad.layers])

        def loss():
            l1, l2, _, _ = q_loss(critics, s, a, r, s2, done, reward_scale=3.0)
            return l1 if which == "q1" else l2

        fd = _fd_vector(loss, lambda: getattr(critics, which),
                        lambda nnet: setattr(critics, which, nnet))
        worst = max(worst, _rel_err(analytic, fd))
    return CheckResult("gradient-q-loss", worst < 1e-4,
                       f"max relative error {worst:.2e} (<1e-4), {trials} instances")


def gradient_certificate_policy(seed: int = 0, trials: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        ps, critics, ds, _ = _small_instance(rng, 1 + trial % 2)
        states = rng.standard_normal((4, ds))
        eps = draw_eps(ps, 4, np.random.default_rng(int(rng.integers(2 ** 32))))
        fn = q_min_fn(critics)
        _, grads, _ = policy_loss_with_noise(ps, fn, states, eps)
        for nid in ps.topo:
            analytic = np.concatenate(
                [np.concatenate([gw.ravel(), gb]) for gw, gb in grads[nid].layers])

            def loss(nid=nid):
                return policy_loss_value(ps, fn, states, eps)

            fd = _fd_vector(loss, lambda nid=nid: ps.subs[nid].net,
                            lambda nnet, nid=nid: setattr(ps.subs[nid], "net", nnet))
            worst = max(worst, _rel_err(analytic, fd))
    return CheckResult("gradient-policy-loss", worst < 1e-4,
                       f"max relative error {worst:.2e} (<1e-4), {trials} instances")


# ---------------------------------------------------------------------------
# chain-rule / density certificates


def _frozen_chain3(seed: int):
    graph = parse_topology(json.dumps({"nodes": [
        {"id": "t1", "action_dims": [0], "parents": []},
        {"id": "t2", "action_dims": [1], "parents": ["t1"]},
        {"id": "t3", "action_dims": [2], "parents": ["t2"]},
    ]}))
    bounds = np.array([1.0, 1.2, 0.8])
    ps = init_policies(graph, 2, bounds, (6, 5), np.random.default_rng(seed))
    jit = np.random.default_rng(seed + 1)
    for nid in ps.topo:
        for w, b in ps.subs[nid].net.layers:
            w *= 0.8
            b += 0.1 * jit.standard_normal(b.shape)
    state = np.array([0.4, -0.3])
    return ps, state, bounds


def _conditional_density_grid(ps: FactoredPolicy, nid: str, state: Array,
                              a_own: Array, a_parent: Array | None) -> Array:
    """Density matrix of one 1-dim node on a grid.

    Rows index the parent grid (absent for roots), columns the own-action
    grid. Evaluates the same formula the sampler claims, through the policy
    module's tanh correction, so corrupting that correction is detectable.
    """
    net = ps.subs[nid].net
    if a_parent is None:
        x = state[None, :]
    else:
        x = np.concatenate([np.tile(state, (a_parent.shape[0], 1)),
                            a_parent[:, None]], axis=1)
    out, _ = mlp_forward(net, x)
    mu, ell = out[:, 0:1], np.clip(out[:, 1:2], policy_mod.LOG_STD_MIN,
                                   policy_mod.LOG_STD_MAX)
    sigma = np.exp(ell)
    scale = float(ps.scales[nid][0])
    u = np.arctanh(np.clip(a_own / scale, -1 + 1e-15, 1 - 1e-15))[None, :]
    z = (u - mu) / sigma
    logp = (-0.5 * z * z - ell - 0.5 * np.log(2 * np.pi)
            - policy_mod.tanh_log_jacobian(u) - np.log(scale))
    return np.exp(logp)


def chain_rule_quadrature_certificate(seed: int = 0, n_grid: int = 500
                                      ) -> CheckResult:
    """The claimed joint density must integrate to 1 over the action box and
    reproduce sampler expectations of a smooth functional."""
    ps, state, bounds = _frozen_chain3(seed)
    x, w = np.polynomial.legendre.leggauss(n_grid)
    g1, w1 = x * bounds[0], w * bounds[0]
    g2, w2 = x * bounds[1], w * bounds[1]
    g3, w3 = x * bounds[2], w * bounds[2]

    p1 = _conditional_density_grid(ps, "t1", state, g1, None)[0]      # (n,)
    p2 = _conditional_density_grid(ps, "t2", state, g2, g1)           # (n1, n2)
    p3 = _conditional_density_grid(ps, "t3", state, g3, g2)           # (n2, n3)

    inner3 = p3 @ w3                                   # integral over a3 per a2
    inner2 = p2 @ (w2 * inner3)                        # then over a2 per a1
    mass = float(w1 @ (p1 * inner2))
    mass_err = abs(mass - 1.0)

    # smooth functional: E[cos(a1 + 2 a2 - a3)] by quadrature vs Monte Carlo
    e3 = p3 @ (w3 * np.exp(-1j * g3))
    e2 = p2 @ (w2 * np.exp(2j * g2) * e3)
    quad_val = float(np.real(w1 @ (p1 * np.exp(1j * g1) * e2)))
    n_mc = 200_000
    actions, _ = sample_actions_batch(ps, np.tile(state, (n_mc, 1)),
                                      np.random.default_rng(seed + 99))
    f = np.cos(actions[:, 0] + 2 * actions[:, 1] - actions[:, 2])
    mc_val = float(f.mean())
    se = float(f.std() / np.sqrt(n_mc))
    func_gap = abs(quad_val - mc_val)
    passed = mass_err < 1e-6 and func_gap < 4 * se
    return CheckResult(
        "chain-rule-density-quadrature", passed,
        f"|integral-1| {mass_err:.2e} (<1e-6), functional gap {func_gap:.2e} "
        f"vs 4*SE {4 * se:.2e}")


def gradient_decomposition_certificate(seed: int = 0) -> CheckResult:
    """Sum of per-node log-prob gradients equals the joint gradient."""
    ps, state, _ = _frozen_chain3(seed)
    rng = np.random.default_rng(seed + 5)
    states = rng.standard_normal((4, 2))
    eps = draw_eps(ps, 4, rng)
    ones = {nid: 1.0 for nid in ps.topo}
    joint_grads, _ = log_prob_sum_grads(ps, states, eps, ones)
    per_node = []
    for nid in ps.topo:
        w = {n: (1.0 if n == nid else 0.0) for n in ps.topo}
        g, _ = log_prob_sum_grads(ps, states, eps, w)
        per_node.append(g)
    worst = 0.0
    for nid in ps.topo:
        for li in range(len(joint_grads[nid].layers)):
            jw, jb = joint_grads[nid].layers[li]
            sw = sum(p[nid].layers[li][0] for p in per_node)
            sb = sum(p[nid].layers[li][1] for p in per_node)
            worst = max(worst,
                        float(np.max(np.abs(jw - sw)) / max(1.0, np.abs(jw).max())),
                        float(np.max(np.abs(jb - sb)) / max(1.0, np.abs(jb).max())))
    return CheckResult("gradient-decomposition-identity", worst < 1e-10,
                       f"max relative gap {worst:.2e} (<1e-10)")


# ---------------------------------------------------------------------------
# m=1 equivalence


def m1_equivalence_certificate(seed: int = 0, updates: int = 100) -> CheckResult:
    """Single-node factored agent tracks the straight-line SAC bit for bit."""
    cfg = TrainConfig(env="pendulum", topology="single", seed=seed,
                      total_steps=64 + updates, start_steps=64, batch_size=32,
                      hidden_sizes=(8, 8), buffer_capacity=4096, eval_interval=0)
    env_a, env_b = make_env("pendulum"), make_env("pendulum")
    a = Agent(env_a.spec, single_node_graph(1), cfg)
    b = ReferenceSacAgent(env_b.spec, cfg)
    sa = env_a.reset(seed=int(a.streams["env"].integers(2 ** 63)))
    sb = env_b.reset(seed=int(b.streams["env"].integers(2 ** 63)))
    done_updates = 0
    for step in range(1, cfg.total_steps + 1):
        mode = "uniform_random" if step <= cfg.start_steps else "stochastic"
        ja, jb = a.act(sa, mode), b.act(sb, mode)
        if not np.array_equal(ja.action, jb.action):
            return CheckResult("m1-sac-equivalence", False,
                               f"actions diverged at env step {step}")
        oa, ob = env_a.step(ja.action), env_b.step(jb.action)
        a.observe(Transition(sa, ja, oa[1], oa[0], oa[2], oa[3]))
        b.observe(Transition(sb, jb, ob[1], ob[0], ob[2], ob[3]))
        sa, sb = oa[0], ob[0]
        if oa[3]:
            sa = env_a.reset(seed=int(a.streams["env"].integers(2 ** 63)))
            sb = env_b.reset(seed=int(b.streams["env"].integers(2 ** 63)))
        if step > cfg.start_steps:
            a.update()
            b.update()
            done_updates += 1
            pairs = [
                (params_to_vector(a.policies.subs["t1"].net), params_to_vector(b.pi)),
                (params_to_vector(a.critics.v), params_to_vector(b.v)),
                (params_to_vector(a.critics.q1), params_to_vector(b.q1)),
                (params_to_vector(a.critics.q2), params_to_vector(b.q2)),
                (params_to_vector(a.critics.v_target), params_to_vector(b.v_target)),
            ]
            if not all(np.array_equal(x, y) for x, y in pairs):
                return CheckResult("m1-sac-equivalence", False,
                                   f"parameters diverged at update {done_updates}")
    return CheckResult("m1-sac-equivalence", True,
                       f"bit-identical parameters across {done_updates} updates")


# ---------------------------------------------------------------------------


def run_all(seed: int = 0) -> list[CheckResult]:
    results = [lemma1_evaluation_certificate(seed)]
    results.extend(policy_iteration_certificates(seed))
    results.append(gradient_certificate_value(seed))
    results.append(gradient_certificate_q(seed))
    results.append(gradient_certificate_policy(seed))
    results.append(chain_rule_quadrature_certificate(seed))
    results.append(gradient_decomposition_certificate(seed))
    results.append(m1_equivalence_certificate(seed))
    return results
