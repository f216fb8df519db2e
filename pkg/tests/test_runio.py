import json

import numpy as np
import pytest

from dagsac.agent import Agent, TrainConfig
from dagsac.envs import make_env
from dagsac.graph import load_preset
from dagsac.runio import (
    METRICS_HEADER,
    MetricsWriter,
    agent_from_checkpoint,
    config_from_doc,
    config_to_doc,
    fmt,
    load_checkpoint,
    save_checkpoint,
    strip_timing,
)


def test_fmt_is_shortest_roundtrip():
    assert fmt(0.1) == "0.1"
    assert fmt(1.0 / 3.0) == "0.3333333333333333"
    assert float(fmt(np.float64(-1234.56789))) == -1234.56789


def test_metrics_writer_schema_and_zero_loss_prefix(tmp_path):
    path = tmp_path / "m.csv"
    w = MetricsWriter(str(path), flush_interval=1)
    w.write_row(200, 1, -5.5, -5.5, None, 12.5)
    w.close()
    lines = path.read_text().splitlines()
    assert lines[0] == METRICS_HEADER
    cols = lines[1].split(",")
    assert cols[:4] == ["200", "1", "-5.5", "-5.5"]
    assert cols[4:9] == ["0.0"] * 5


def test_strip_timing_removes_only_wall_ms(tmp_path):
    src = tmp_path / "m.csv"
    src.write_text(METRICS_HEADER + "\n1,1,-2.0,-2.0,0.0,0.0,0.0,0.0,0.0,99.9\n")
    dst = tmp_path / "m2.csv"
    strip_timing(str(src), str(dst))
    lines = dst.read_text().splitlines()
    assert lines[0] == METRICS_HEADER.rsplit(",", 1)[0]
    assert lines[1] == "1,1,-2.0,-2.0,0.0,0.0,0.0,0.0,0.0"


def test_config_doc_roundtrip():
    cfg = TrainConfig(env="chain-lqr-3", hidden_sizes=(16, 8), seed=4)
    doc = config_to_doc(cfg)
    assert doc["hidden_sizes"] == [16, 8]
    again = config_from_doc(json.loads(json.dumps(doc)))
    assert again == cfg


def test_checkpoint_rejects_foreign_documents(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other", "kind": "agent"}')
    with pytest.raises(ValueError, match="not a dagsac-checkpoint"):
        load_checkpoint(str(p))


def test_agent_checkpoint_restores_exact_parameters(tmp_path):
    env = make_env("chain-lqr-3")
    cfg = TrainConfig(env="chain-lqr-3", topology="hopper-chain", seed=3,
                      hidden_sizes=(8, 8), buffer_capacity=64, batch_size=8,
                      total_steps=50, start_steps=10)
    agent = Agent(env.spec, load_preset("hopper-chain"), cfg)
    path = tmp_path / "ck.json"
    save_checkpoint(str(path), agent, env_step=0)
    clone = agent_from_checkpoint(load_checkpoint(str(path)))
    for nid in agent.policies.topo:
        for (w1, b1), (w2, b2) in zip(agent.policies.subs[nid].net.layers,
                                      clone.policies.subs[nid].net.layers):
            assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
    assert clone.adam["q1"].step == agent.adam["q1"].step
    s = env.reset(seed=1)
    a1 = agent.act(s, "deterministic").action
    a2 = clone.act(s, "deterministic").action
    assert np.array_equal(a1, a2)


def test_agent_checkpoint_detects_shape_tampering(tmp_path):
    env = make_env("pendulum")
    cfg = TrainConfig(env="pendulum", hidden_sizes=(8, 8), buffer_capacity=64)
    from dagsac.graph import single_node_graph

    agent = Agent(env.spec, single_node_graph(1), cfg)
    path = tmp_path / "ck.json"
    save_checkpoint(str(path), agent, env_step=0)
    doc = load_checkpoint(str(path))
    doc["policies"]["t1"][0][0] = [[0.0, 0.0]]  # wrong input width
    with pytest.raises(ValueError):
        agent_from_checkpoint(doc)
