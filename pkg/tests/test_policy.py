import numpy as np
import pytest

from dagsac.graph import parse_topology, single_node_graph
from dagsac.mlp import Mlp, params_to_vector, vector_to_params
from dagsac.policy import (
    FactoredPolicy,
    JointAction,
    SubPolicy,
    deterministic_action,
    draw_eps,
    init_policies,
    log_prob_joint,
    log_prob_sum_grads,
    policy_loss,
    policy_loss_value,
    policy_loss_with_noise,
    sample_actions_batch,
    sample_joint,
    tanh_log_jacobian,
)

import json


def graph_from(nodes):
    return parse_topology(json.dumps({"nodes": nodes}))


CHAIN2 = [
    {"id": "t1", "action_dims": [0], "parents": []},
    {"id": "t2", "action_dims": [1], "parents": ["t1"]},
]
CHAIN3 = [
    {"id": "t1", "action_dims": [0], "parents": []},
    {"id": "t2", "action_dims": [1], "parents": ["t1"]},
    {"id": "t3", "action_dims": [2], "parents": ["t2"]},
]


def zero_policy(graph, state_dim, bounds):
    ps = init_policies(graph, state_dim, np.asarray(bounds, float), (4,),
                       np.random.default_rng(0))
    for nid in ps.topo:
        for w, b in ps.subs[nid].net.layers:
            w[:] = 0.0
            b[:] = 0.0
    return ps


def random_policy_set(graph, state_dim, bounds, seed, hidden=(6, 5), scale=0.5):
    ps = init_policies(graph, state_dim, np.asarray(bounds, float), hidden,
                       np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for nid in ps.topo:
        for w, b in ps.subs[nid].net.layers:
            w[:] = scale * rng.standard_normal(w.shape)
            b[:] = 0.1 * rng.standard_normal(b.shape)
    return ps


def test_zero_net_sampling_matches_analytic_density():
    graph = graph_from(CHAIN2)
    ps = zero_policy(graph, 3, [2.0, 0.5])
    state = np.array([0.3, -0.1, 0.9])
    ja = sample_joint(ps, state, np.random.default_rng(42))
    eps = ja.pre_squash  # mu=0, sigma=1 so u equals the draw
    scales = np.array([2.0, 0.5])
    assert np.allclose(ja.action, np.tanh(eps) * scales, atol=1e-15)
    for k, nid in enumerate(("t1", "t2")):
        want = (-0.5 * eps[k] ** 2 - 0.5 * np.log(2 * np.pi)
                - np.log(1.0 - np.tanh(eps[k]) ** 2) - np.log(scales[k]))
        assert abs(ja.per_node_log_prob[nid] - want) < 1e-12


def test_single_node_log_prob_is_the_joint():
    graph = single_node_graph(3)
    ps = random_policy_set(graph, 2, [1.0, 1.0, 1.0], seed=5)
    ja = sample_joint(ps, np.array([0.1, -0.2]), np.random.default_rng(1))
    assert set(ja.per_node_log_prob) == {"t1"}
    assert ja.mean_log_prob == ja.per_node_log_prob["t1"]


def test_log_prob_joint_reproduces_sampled_values():
    graph = graph_from(CHAIN3)
    ps = random_policy_set(graph, 4, [1.0, 2.0, 0.7], seed=9)
    state = np.random.default_rng(2).standard_normal(4)
    ja = sample_joint(ps, state, np.random.default_rng(3))
    mean, per_node = log_prob_joint(ps, state, ja)
    for nid, val in ja.per_node_log_prob.items():
        assert abs(per_node[nid] - val) < 1e-12
    assert abs(mean - ja.mean_log_prob) < 1e-12


def test_log_prob_joint_requires_pre_squash():
    graph = single_node_graph(2)
    ps = random_policy_set(graph, 2, [1.0, 1.0], seed=3)
    ja = JointAction(np.array([0.1, 0.2]), None, {"t1": 0.0})
    with pytest.raises(ValueError, match="pre_squash"):
        log_prob_joint(ps, np.zeros(2), ja)


def test_star_symmetry_equal_nodes_equal_log_probs():
    star = graph_from([
        {"id": "t1", "action_dims": [0], "parents": []},
        {"id": "t2", "action_dims": [1], "parents": ["t1"]},
        {"id": "t3", "action_dims": [2], "parents": ["t1"]},
        {"id": "t4", "action_dims": [3], "parents": ["t1"]},
        {"id": "t5", "action_dims": [4], "parents": ["t1"]},
    ])
    ps = zero_policy(star, 1, np.ones(5))
    v = 0.3
    ja = JointAction(np.full(5, v), np.full(5, np.arctanh(v)),
                     {f"t{i}": 0.0 for i in range(1, 6)})
    mean, per_node = log_prob_joint(ps, np.array([0.7]), ja)
    vals = list(per_node.values())
    assert np.ptp(vals) < 1e-14
    assert abs(mean - vals[0]) < 1e-14


def test_actions_always_strictly_inside_bounds():
    graph = graph_from(CHAIN3)
    bounds = np.array([2.0, 1.0, 0.5])
    ps = random_policy_set(graph, 3, bounds, seed=8, scale=0.5)
    rng = np.random.default_rng(0)
    states = rng.standard_normal((200, 3))
    actions, _ = sample_actions_batch(ps, states, rng)
    assert (np.abs(actions) < bounds).all()
    det = deterministic_action(ps, states[0])
    assert (np.abs(det) < bounds).all()


def test_saturated_tanh_never_escapes_bounds_and_stays_finite():
    # float64 tanh rounds to exactly 1.0 for huge pre-squash values; the
    # action must still respect |a| <= bound and log-probs must stay finite
    graph = graph_from(CHAIN3)
    bounds = np.array([2.0, 1.0, 0.5])
    ps = random_policy_set(graph, 3, bounds, seed=8, scale=25.0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        ja = sample_joint(ps, rng.standard_normal(3), rng)
        assert (np.abs(ja.action) <= bounds).all()
        assert all(np.isfinite(v) for v in ja.per_node_log_prob.values())


def test_deterministic_action_zero_net_is_zero_and_repeatable():
    graph = graph_from(CHAIN2)
    ps = zero_policy(graph, 2, [1.0, 1.0])
    a = deterministic_action(ps, np.array([0.4, -0.4]))
    assert np.array_equal(a, np.zeros(2))
    ps2 = random_policy_set(graph, 2, [1.0, 1.0], seed=11)
    s = np.array([0.2, 0.9])
    assert np.array_equal(deterministic_action(ps2, s), deterministic_action(ps2, s))


def test_deterministic_action_agrees_with_monte_carlo_mean_at_zero_mean():
    # E[tanh(mu + sigma*eps)] != tanh(mu) in general; at mu=0 both sides are
    # exactly 0 by symmetry, which makes the 3-standard-error check sound
    graph = graph_from(CHAIN2)
    ps = zero_policy(graph, 2, [2.0, 1.0])
    state = np.array([0.1, 0.2])
    det = deterministic_action(ps, state)
    rng = np.random.default_rng(123)
    n = 100_000
    actions, _ = sample_actions_batch(ps, np.tile(state, (n, 1)), rng)
    se = actions.std(axis=0) / np.sqrt(n)
    assert (np.abs(actions.mean(axis=0) - det) < 3.0 * se).all()


def test_sample_joint_flags_non_finite_network():
    graph = single_node_graph(1)
    ps = zero_policy(graph, 1, [1.0])
    ps.subs["t1"].net.layers[0][0][0, 0] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(ValueError, match="t1"):
        sample_joint(ps, np.array([1.0]), np.random.default_rng(0))


def quadratic_q(center):
    """Smooth analytic stand-in for min-Q with exact action gradient."""
    def fn(states, actions):
        diff = actions - center
        q = -np.sum(diff * diff, axis=1)
        return q, -2.0 * diff
    return fn


def test_constant_q_contributes_zero_gradient():
    graph = graph_from(CHAIN2)
    ps = random_policy_set(graph, 2, [1.0, 1.0], seed=21)
    states = np.random.default_rng(4).standard_normal((5, 2))
    eps = draw_eps(ps, 5, np.random.default_rng(5))

    def const_q(c):
        def fn(s, a):
            return np.full(s.shape[0], c), np.zeros_like(a)
        return fn

    loss_c, grads_c, _ = policy_loss_with_noise(ps, const_q(3.7), states, eps)
    loss_0, grads_0, _ = policy_loss_with_noise(ps, const_q(0.0), states, eps)
    assert abs((loss_c + 3.7) - loss_0) < 1e-12
    for nid in ps.topo:
        for (gw, gb), (hw, hb) in zip(grads_c[nid].layers, grads_0[nid].layers):
            assert np.array_equal(gw, hw) and np.array_equal(gb, hb)


def _policy_fd_check(ps, q_fn, states, eps, h=1e-5):
    """Max relative error of analytic vs central-difference gradients."""
    _, grads, _ = policy_loss_with_noise(ps, q_fn, states, eps)
    worst = 0.0
    for nid in ps.topo:
        net = ps.subs[nid].net
        base = params_to_vector(net)
        analytic = np.concatenate(
            [np.concatenate([gw.ravel(), gb]) for gw, gb in grads[nid].layers])
        fd = np.zeros_like(base)
        for k in range(base.size):
            for sign, slot in ((1.0, 0), (-1.0, 1)):
                vec = base.copy()
                vec[k] += sign * h
                ps.subs[nid].net = vector_to_params(net, vec)
                val = policy_loss_value(ps, q_fn, states, eps)
                fd[k] += sign * val
            fd[k] /= 2.0 * h
        ps.subs[nid].net = net
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), 1e-6)
        worst = max(worst, float(np.max(np.abs(fd - analytic) / denom)))
    return worst


def test_policy_gradient_matches_finite_differences_two_node_chain():
    graph = graph_from(CHAIN2)
    ps = random_policy_set(graph, 3, [1.0, 1.5], seed=31, hidden=(5, 4))
    rng = np.random.default_rng(6)
    states = rng.standard_normal((4, 3))
    eps = draw_eps(ps, 4, rng)
    q_fn = quadratic_q(np.array([0.3, -0.2]))
    assert _policy_fd_check(ps, q_fn, states, eps) < 1e-4


def test_policy_gradient_fd_with_multidim_nodes():
    graph = graph_from([
        {"id": "a", "action_dims": [0, 1], "parents": []},
        {"id": "b", "action_dims": [2], "parents": ["a"]},
    ])
    ps = random_policy_set(graph, 2, [1.0, 1.0, 2.0], seed=33, hidden=(5,))
    rng = np.random.default_rng(7)
    states = rng.standard_normal((3, 2))
    eps = draw_eps(ps, 3, rng)
    assert _policy_fd_check(ps, quadratic_q(np.zeros(3)), states, eps) < 1e-4


def test_detach_parent_actions_cuts_only_the_parent_path():
    graph = graph_from(CHAIN2)
    full = random_policy_set(graph, 2, [1.0, 1.0], seed=41)
    cut = random_policy_set(graph, 2, [1.0, 1.0], seed=41)
    cut.detach_parent_actions = True
    rng = np.random.default_rng(8)
    states = rng.standard_normal((6, 2))
    eps = draw_eps(full, 6, rng)
    q_fn = quadratic_q(np.array([0.1, 0.1]))
    _, g_full, _ = policy_loss_with_noise(full, q_fn, states, eps)
    _, g_cut, _ = policy_loss_with_noise(cut, q_fn, states, eps)
    # the child's own gradient is identical; the root's differs
    for (a, b), (c, d) in zip(g_full["t2"].layers, g_cut["t2"].layers):
        assert np.array_equal(a, c) and np.array_equal(b, d)
    assert any(not np.array_equal(a, c)
               for (a, _), (c, _) in zip(g_full["t1"].layers, g_cut["t1"].layers))


def test_gradient_decomposition_sum_of_per_node_equals_joint():
    # d(sum_i logp_i)/d(params) computed in one pass equals the sum of the
    # per-node passes, everywhere including ancestor parameters
    graph = graph_from(CHAIN3)
    ps = random_policy_set(graph, 3, [1.0, 1.0, 1.0], seed=51)
    rng = np.random.default_rng(9)
    states = rng.standard_normal((4, 3))
    eps = draw_eps(ps, 4, rng)
    ones = {nid: 1.0 for nid in ps.topo}
    joint_grads, _ = log_prob_sum_grads(ps, states, eps, ones)
    pieces = []
    for nid in ps.topo:
        w = {n: (1.0 if n == nid else 0.0) for n in ps.topo}
        g, _ = log_prob_sum_grads(ps, states, eps, w)
        pieces.append(g)
    for nid in ps.topo:
        for li, (gw, gb) in enumerate(joint_grads[nid].layers):
            sw = sum(p[nid].layers[li][0] for p in pieces)
            sb = sum(p[nid].layers[li][1] for p in pieces)
            denom = max(1.0, float(np.abs(gw).max()))
            assert np.max(np.abs(gw - sw)) / denom < 1e-10
            assert np.max(np.abs(gb - sb)) / max(1.0, float(np.abs(gb).max())) < 1e-10


def test_chain_rule_identity_by_quadrature_two_dims():
    """The claimed joint density (product of per-node conditionals) must
    integrate to 1 over the action box: Gauss-Legendre, exploiting the
    conditional structure so the grid stays tensor-shaped."""
    graph = graph_from(CHAIN2)
    bounds = np.array([1.0, 1.5])
    ps = random_policy_set(graph, 2, bounds, seed=61, scale=0.4)
    state = np.array([0.25, -0.5])

    n = 500
    x1, w1 = np.polynomial.legendre.leggauss(n)
    a1 = x1 * bounds[0]
    w1 = w1 * bounds[0]
    x2, w2 = np.polynomial.legendre.leggauss(n)
    a2 = x2 * bounds[1]
    w2 = w2 * bounds[1]

    def density_node(nid, a_vals, parent_vals):
        net = ps.subs[nid].net
        k = a_vals.shape[0]
        cols = [np.tile(state, (k, 1))]
        if parent_vals is not None:
            cols.append(parent_vals[:, None])
        from dagsac.mlp import mlp_forward
        out, _ = mlp_forward(net, np.concatenate(cols, axis=1))
        mu, ell = out[:, 0], np.clip(out[:, 1], -20, 2)
        sigma = np.exp(ell)
        scale = ps.scales[nid][0]
        u = np.arctanh(np.clip(a_vals / scale, -1 + 1e-15, 1 - 1e-15))
        z = (u - mu) / sigma
        logp = (-0.5 * z * z - ell - 0.5 * np.log(2 * np.pi)
                - np.log1p(-np.tanh(u) ** 2) - np.log(scale))
        return np.exp(logp)

    p1 = density_node("t1", a1, None)                     # (n,)
    mass = 0.0
    for i in range(n):
        p2 = density_node("t2", a2, np.full(n, a1[i]))
        mass += w1[i] * p1[i] * float(w2 @ p2)
    assert abs(mass - 1.0) < 1e-6


def test_policy_loss_raises_on_empty_batch():
    graph = single_node_graph(1)
    ps = random_policy_set(graph, 1, [1.0], seed=71)
    with pytest.raises(ValueError, match="empty"):
        policy_loss(ps, quadratic_q(np.zeros(1)), np.zeros((0, 1)),
                    np.random.default_rng(0))


def test_tanh_log_jacobian_matches_naive_formula():
    u = np.linspace(-3, 3, 41)
    naive = np.log(1.0 - np.tanh(u) ** 2)
    assert np.max(np.abs(tanh_log_jacobian(u) - naive)) < 1e-12
    big = tanh_log_jacobian(np.array([50.0, -50.0]))
    assert np.isfinite(big).all()
