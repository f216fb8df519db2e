"""Run artifacts: metrics CSV, checkpoints, and resolved-config records.

Everything is plain JSON / CSV text. Floats are written with repr (shortest
round-trip), so identical runs produce byte-identical files and a checkpoint
survives save -> load -> save unchanged.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .agent import Agent, TrainConfig
from .graph import ActionGraph, parse_topology
from .mlp import AdamState, Mlp

METRICS_HEADER = ("env_step,episode,episode_return,avg_return_100,"
                  "loss_v,loss_q1,loss_q2,loss_pi,mean_sub_entropy,wall_ms")

CHECKPOINT_FORMAT = "dagsac-checkpoint-v1"


def fmt(x) -> str:
    return repr(float(x))


class MetricsWriter:
    """Streams metrics rows; one row per finished episode."""

    def __init__(self, path: str, flush_interval: int = 25):
        self.path = path
        self.flush_interval = max(1, flush_interval)
        self._fh = open(path, "w")
        self._fh.write(METRICS_HEADER + "\n")
        self._pending = 0

    def write_row(self, env_step: int, episode: int, episode_return: float,
                  avg_return_100: float, losses, wall_ms: float) -> None:
        if losses is None:
            loss_cols = ["0.0"] * 5
        else:
            loss_cols = [fmt(losses.j_v), fmt(losses.j_q1), fmt(losses.j_q2),
                         fmt(losses.j_pi), fmt(losses.mean_sub_entropy)]
        row = [str(env_step), str(episode), fmt(episode_return),
               fmt(avg_return_100), *loss_cols, fmt(wall_ms)]
        self._fh.write(",".join(row) + "\n")
        self._pending += 1
        if self._pending >= self.flush_interval:
            self._fh.flush()
            self._pending = 0

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()


def strip_timing(metrics_path: str, out_path: str) -> None:
    """Project away the wall_ms column (the only non-deterministic one)."""
    with open(metrics_path) as fh, open(out_path, "w") as out:
        for line in fh:
            out.write(line.rstrip("\n").rsplit(",", 1)[0] + "\n")


def _net_to_lists(net: Mlp) -> list:
    return [[w.tolist(), b.tolist()] for w, b in net.layers]


def _net_from_lists(data: list) -> Mlp:
    return Mlp([(np.array(w, dtype=np.float64), np.array(b, dtype=np.float64))
                for w, b in data])


def _adam_to_doc(state: AdamState) -> dict:
    return {
        "m": state.m.tolist(),
        "v": state.v.tolist(),
        "step": state.step,
        "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
    }


def _adam_from_doc(doc: dict) -> AdamState:
    return AdamState(
        m=np.array(doc["m"], dtype=np.float64),
        v=np.array(doc["v"], dtype=np.float64),
        step=doc["step"], beta1=doc["beta1"], beta2=doc["beta2"], eps=doc["eps"])


def config_to_doc(cfg: TrainConfig) -> dict:
    doc = dataclasses.asdict(cfg)
    doc["hidden_sizes"] = list(cfg.hidden_sizes)
    return doc


def config_from_doc(doc: dict) -> TrainConfig:
    doc = dict(doc)
    doc["hidden_sizes"] = tuple(doc["hidden_sizes"])
    return TrainConfig(**doc)


def save_checkpoint(path: str, agent: Agent, env_step: int) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "kind": "agent",
        "env": agent.spec.id,
        "env_step": env_step,
        "config": config_to_doc(agent.config),
        "topology": agent.graph.to_document(),
        "policies": {nid: _net_to_lists(agent.policies.subs[nid].net)
                     for nid in agent.policies.topo},
        "critics": {name: _net_to_lists(getattr(agent.critics, name))
                    for name in ("v", "v_target", "q1", "q2")},
        "adam": {name: _adam_to_doc(state) for name, state in agent.adam.items()},
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} document")
    return doc


def agent_from_checkpoint(doc: dict) -> Agent:
    """Rebuild a full agent (networks and optimizer state) from a document."""
    from .envs import make_env

    if doc.get("kind") != "agent":
        raise ValueError(f"checkpoint kind {doc.get('kind')!r} is not an agent")
    env = make_env(doc["env"])
    cfg = config_from_doc(doc["config"])
    graph = parse_topology(json.dumps(doc["topology"]))
    if graph.action_dim_total != env.spec.action_dim:
        raise ValueError("checkpoint topology does not match its environment")
    agent = Agent(env.spec, graph, cfg)
    for nid, data in doc["policies"].items():
        net = _net_from_lists(data)
        if net.in_dim != agent.policies.subs[nid].net.in_dim:
            raise ValueError(f"checkpoint net {nid!r} has incompatible shape")
        agent.policies.subs[nid].net = net
    for name in ("v", "v_target", "q1", "q2"):
        setattr(agent.critics, name, _net_from_lists(doc["critics"][name]))
    agent.adam = {name: _adam_from_doc(d) for name, d in doc["adam"].items()}
    return agent


def write_run_record(path: str, cfg: TrainConfig, graph: ActionGraph,
                     factorization: str, out_dir: str, extras: dict | None = None) -> None:
    """run.json: everything needed to re-launch the run from the artifact."""
    doc = {
        "config": config_to_doc(cfg),
        "topology": graph.to_document(),
        "factorization": factorization,
        "out_dir": out_dir,
        "seed": cfg.seed,
    }
    if extras:
        doc.update(extras)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
