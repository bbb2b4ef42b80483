"""Directed acyclic graphs: representation, traversal, random generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class CycleError(ValueError):
    """Raised when an edge set contains a directed cycle."""


@dataclass(frozen=True)
class Dag:
    """Immutable DAG given by per-node parent lists.

    ``leaf`` marks the designated target node; it is required to have no
    children. ``topo_order`` is computed on construction and cached.
    """

    n_nodes: int
    parents: tuple[tuple[int, ...], ...]
    leaf: int
    topo_order: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if len(self.parents) != self.n_nodes:
            raise ValueError("parents must have one entry per node")
        if not 0 <= self.leaf < self.n_nodes:
            raise ValueError(f"leaf index {self.leaf} out of range")
        for j, pa in enumerate(self.parents):
            for p in pa:
                if not 0 <= p < self.n_nodes:
                    raise ValueError(f"node {j} has invalid parent index {p}")
        object.__setattr__(self, "topo_order", tuple(topological_sort(self)))
        if any(self.leaf in pa for pa in self.parents):
            raise ValueError(f"leaf {self.leaf} must not have children")

    @property
    def children(self) -> tuple[tuple[int, ...], ...]:
        ch: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for j, pa in enumerate(self.parents):
            for p in pa:
                ch[p].append(j)
        return tuple(tuple(c) for c in ch)

    def edges(self) -> list[tuple[int, int]]:
        return [(p, j) for j in range(self.n_nodes) for p in self.parents[j]]

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "edges": [[p, c] for p, c in self.edges()],
            "leaf": self.leaf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dag":
        n = int(d["n_nodes"])
        parents: list[list[int]] = [[] for _ in range(n)]
        for p, c in d["edges"]:
            parents[int(c)].append(int(p))
        return cls(n, tuple(tuple(sorted(pa)) for pa in parents), int(d["leaf"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "Dag":
        return cls.from_dict(json.loads(s))


def topological_sort(dag: Dag) -> list[int]:
    """Kahn's algorithm; ties broken by ascending node index.

    Raises CycleError naming one node on a cycle if the parent lists are
    not acyclic.
    """
    indeg = [len(set(pa)) for pa in dag.parents]
    children: list[set[int]] = [set() for _ in range(dag.n_nodes)]
    for j, pa in enumerate(dag.parents):
        for p in set(pa):
            children[p].add(j)
    ready = sorted(j for j in range(dag.n_nodes) if indeg[j] == 0)
    order: list[int] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        added = False
        for c in sorted(children[node]):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
                added = True
        if added:
            ready.sort()
    if len(order) < dag.n_nodes:
        stuck = min(j for j in range(dag.n_nodes) if indeg[j] > 0)
        raise CycleError(f"cycle detected involving node {stuck}")
    return order


def ancestors(dag: Dag, node: int) -> set[int]:
    """Transitive closure of parents, excluding ``node`` itself."""
    if not 0 <= node < dag.n_nodes:
        raise ValueError(f"node index {node} out of range")
    seen: set[int] = set()
    stack = list(dag.parents[node])
    while stack:
        p = stack.pop()
        if p not in seen:
            seen.add(p)
            stack.extend(dag.parents[p])
    return seen


def descendants(dag: Dag, node: int) -> set[int]:
    """Transitive closure of children, excluding ``node`` itself."""
    if not 0 <= node < dag.n_nodes:
        raise ValueError(f"node index {node} out of range")
    children = dag.children
    seen: set[int] = set()
    stack = list(children[node])
    while stack:
        c = stack.pop()
        if c not in seen:
            seen.add(c)
            stack.extend(children[c])
    return seen


def _build_dag(n_nodes: int, parents: Sequence[Sequence[int]], leaf: int) -> Dag:
    return Dag(n_nodes, tuple(tuple(sorted(set(pa))) for pa in parents), leaf)


def random_dag(n_nodes: int, edge_prob: float, seed: int) -> Dag:
    """Random DAG: uniform node permutation, each forward edge kept w.p. edge_prob.

    Acyclic by construction since edges only run from earlier to later
    positions in the permutation. The leaf is the last sink in index order.
    """
    if n_nodes < 2:
        raise ValueError("n_nodes must be >= 2")
    if not 0.0 < edge_prob <= 1.0:
        raise ValueError("edge_prob must be in (0, 1]")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_nodes)
    pos = np.empty(n_nodes, dtype=int)
    pos[perm] = np.arange(n_nodes)
    parents: list[list[int]] = [[] for _ in range(n_nodes)]
    coin = rng.random((n_nodes, n_nodes))
    for i in range(n_nodes):
        for j in range(n_nodes):
            if pos[i] < pos[j] and coin[i, j] < edge_prob:
                parents[j].append(i)
    has_child = {p for pa in parents for p in pa}
    sinks = [j for j in range(n_nodes) if j not in has_child]
    return _build_dag(n_nodes, parents, max(sinks))


def node_depths(dag: Dag) -> list[int]:
    """Longest-path length (in edges) from any root into each node."""
    depth = [0] * dag.n_nodes
    for j in dag.topo_order:
        if dag.parents[j]:
            depth[j] = 1 + max(depth[p] for p in dag.parents[j])
    return depth


def select_rooted_subgraph(dag: Dag, min_depth: int) -> Optional[Dag]:
    """Induced subgraph of a sufficiently deep sink and its ancestors.

    Picks the sink whose longest incoming path is at least ``min_depth``
    edges (deepest first, ties by ascending index); returns None when no
    sink qualifies. The chosen sink becomes the leaf of the subgraph.
    """
    children = dag.children
    depth = node_depths(dag)
    sinks = [j for j in range(dag.n_nodes) if not children[j]]
    eligible = [j for j in sinks if depth[j] >= min_depth]
    if not eligible:
        return None
    sink = min(eligible, key=lambda j: (-depth[j], j))
    keep = sorted(ancestors(dag, sink) | {sink})
    relabel = {old: new for new, old in enumerate(keep)}
    parents = [[relabel[p] for p in dag.parents[old]] for old in keep]
    return _build_dag(len(keep), parents, relabel[sink])
