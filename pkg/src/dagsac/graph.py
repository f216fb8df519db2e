"""Directed acyclic action graphs.

A graph splits an environment's action vector across nodes: each node owns a
disjoint, non-empty set of action dimensions and lists the nodes whose sampled
actions it conditions on. The joint policy factorizes over the graph in the
chain-rule sense, so validity (exact partition, acyclicity) is enforced at
construction and never rechecked downstream.
"""

from __future__ import annotations

import heapq
import importlib.resources
import json
import os
from dataclasses import dataclass

PRESET_NAMES = ("hopper-chain", "walker-tree", "humanoid-star")


class TopologyError(ValueError):
    """Invalid topology document or graph structure."""


@dataclass(frozen=True)
class ActionNode:
    id: str
    action_dims: tuple[int, ...]
    parents: tuple[str, ...]


class ActionGraph:
    """Validated DAG over action-owning nodes.

    Construction validates everything; instances are immutable afterwards
    and safe to share. Node order in `topological_order` is deterministic,
    with ties broken by lexicographic node id.
    """

    def __init__(self, nodes: list[ActionNode]):
        if not nodes:
            raise TopologyError("graph needs at least one node")
        by_id: dict[str, ActionNode] = {}
        for n in nodes:
            if n.id in by_id:
                raise TopologyError(f"duplicate node id {n.id!r}")
            by_id[n.id] = n
        for n in nodes:
            if not n.action_dims:
                raise TopologyError(f"node {n.id!r} owns no action dims")
            if list(n.action_dims) != sorted(set(n.action_dims)):
                raise TopologyError(
                    f"node {n.id!r} action dims must be strictly increasing, "
                    f"got {list(n.action_dims)}"
                )
            for p in n.parents:
                if p == n.id:
                    raise TopologyError(f"node {n.id!r} lists itself as parent")
                if p not in by_id:
                    raise TopologyError(f"node {n.id!r} references unknown parent {p!r}")
        owned: dict[int, str] = {}
        for n in nodes:
            for d in n.action_dims:
                if d < 0:
                    raise TopologyError(f"node {n.id!r} owns negative action dim {d}")
                if d in owned:
                    raise TopologyError(
                        f"action dim {d} owned by both {owned[d]!r} and {n.id!r}"
                    )
                owned[d] = n.id
        total = max(owned) + 1
        missing = sorted(set(range(total)) - set(owned))
        if missing:
            raise TopologyError(f"action dims {missing} are owned by no node")

        self.nodes: dict[str, ActionNode] = by_id
        self.action_dim_total: int = total
        self._topo: tuple[str, ...] = self._sort(by_id)
        self._topo_pos = {nid: i for i, nid in enumerate(self._topo)}

    @staticmethod
    def _sort(by_id: dict[str, ActionNode]) -> tuple[str, ...]:
        children: dict[str, list[str]] = {nid: [] for nid in by_id}
        indeg = {nid: len(by_id[nid].parents) for nid in by_id}
        for n in by_id.values():
            for p in n.parents:
                children[p].append(n.id)
        ready = [nid for nid, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            nid = heapq.heappop(ready)
            order.append(nid)
            for c in children[nid]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, c)
        if len(order) < len(by_id):
            raise TopologyError(f"graph has a cycle: {_find_cycle(by_id)}")
        return tuple(order)

    def node(self, node_id: str) -> ActionNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TopologyError(f"unknown node id {node_id!r}") from None

    def parents_in_topo_order(self, node_id: str) -> list[str]:
        return sorted(self.node(node_id).parents, key=self._topo_pos.__getitem__)

    def to_document(self) -> dict:
        return {
            "nodes": [
                {"id": n.id, "action_dims": list(n.action_dims), "parents": list(n.parents)}
                for n in (self.nodes[nid] for nid in self._topo)
            ]
        }


def _find_cycle(by_id: dict[str, ActionNode]) -> str:
    """One offending cycle path, rendered like a->b->a."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in by_id}
    stack: list[str] = []

    def visit(nid: str) -> list[str] | None:
        color[nid] = GREY
        stack.append(nid)
        for p in sorted(by_id[nid].parents):
            if color[p] == GREY:
                i = stack.index(p)
                return stack[i:] + [p]
            if color[p] == WHITE:
                found = visit(p)
                if found:
                    return found
        stack.pop()
        color[nid] = BLACK
        return None

    for nid in sorted(by_id):
        if color[nid] == WHITE:
            found = visit(nid)
            if found:
                return "->".join(found)
    return "<none>"


def parse_topology(spec_text: str) -> ActionGraph:
    """Parse and fully validate a topology document (JSON).

    Schema: {"nodes": [{"id": str, "action_dims": [int...], "parents": [str...]}]}.
    Returns a valid graph or raises TopologyError; never a partial graph.
    """
    try:
        doc = json.loads(spec_text)
    except json.JSONDecodeError as e:
        raise TopologyError(f"syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict) or "nodes" not in doc:
        raise TopologyError('topology document needs a top-level "nodes" list')
    raw = doc["nodes"]
    if not isinstance(raw, list):
        raise TopologyError('"nodes" must be a list')
    nodes = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise TopologyError(f"nodes[{i}] is not an object")
        try:
            nid = item["id"]
            dims = item["action_dims"]
        except KeyError as e:
            raise TopologyError(f"nodes[{i}] missing key {e.args[0]!r}") from None
        parents = item.get("parents", [])
        if not isinstance(nid, str):
            raise TopologyError(f"nodes[{i}].id must be a string")
        if not isinstance(dims, list) or not all(isinstance(d, int) for d in dims):
            raise TopologyError(f"nodes[{i}].action_dims must be a list of ints")
        if not isinstance(parents, list) or not all(isinstance(p, str) for p in parents):
            raise TopologyError(f"nodes[{i}].parents must be a list of strings")
        nodes.append(ActionNode(nid, tuple(dims), tuple(parents)))
    return ActionGraph(nodes)


def topological_order(graph: ActionGraph) -> list[str]:
    """Every node after all its parents; ties broken lexicographically."""
    return list(graph._topo)


def factorization_string(graph: ActionGraph) -> str:
    """Chain-rule rendering like "P(t1)P(t2|t1)", nodes in topological order,
    parents sorted lexicographically inside each conditional."""
    parts = []
    for nid in graph._topo:
        parents = sorted(graph.nodes[nid].parents)
        if parents:
            parts.append(f"P({nid}|{','.join(parents)})")
        else:
            parts.append(f"P({nid})")
    return "".join(parts)


def parent_action_width(graph: ActionGraph, node_id: str) -> int:
    """Total number of action dims owned by the node's parents."""
    node = graph.node(node_id)
    return sum(len(graph.nodes[p].action_dims) for p in node.parents)


def single_node_graph(action_dim: int) -> ActionGraph:
    """The degenerate one-node graph owning every action dimension."""
    return ActionGraph([ActionNode("t1", tuple(range(action_dim)), ())])


def load_preset(name: str) -> ActionGraph:
    fname = name.replace("-", "_") + ".json"
    ref = importlib.resources.files("dagsac").joinpath("topologies").joinpath(fname)
    return parse_topology(ref.read_text())


def resolve_topology(spec: str, action_dim: int) -> ActionGraph:
    """Resolve a preset name or file path into a validated graph.

    "single" adapts to the environment's action dimensionality; file presets
    carry fixed dims and must match the environment exactly.
    """
    if spec == "single":
        graph = single_node_graph(action_dim)
    elif spec in PRESET_NAMES:
        graph = load_preset(spec)
    elif os.path.exists(spec):
        with open(spec) as fh:
            graph = parse_topology(fh.read())
    else:
        raise TopologyError(
            f"topology {spec!r} is neither 'single', a preset "
            f"{PRESET_NAMES}, nor an existing file"
        )
    if graph.action_dim_total != action_dim:
        raise TopologyError(
            f"topology covers {graph.action_dim_total} action dims, "
            f"environment has {action_dim}"
        )
    return graph
