"""Define-flow / use-flow slicing and data-flow tree construction."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from .dfg import EDGE_KINDS, EdgeKind, EnhancedDFG, Vocab, scale_cdp

DEFAULT_K = 15


class TreeEdgeType(IntEnum):
    ROOT = 0
    D_DEFINE = 1
    I_DEFINE = 2
    C_DEFINE = 3
    R_DEFINE = 4
    D_USE = 5
    I_USE = 6
    C_USE = 7
    R_USE = 8

    @classmethod
    def of(cls, kind: EdgeKind, use: bool) -> "TreeEdgeType":
        return cls(1 + EDGE_KINDS.index(EdgeKind(kind)) + (4 if use else 0))

    @property
    def token(self) -> str:
        if self is TreeEdgeType.ROOT:
            return "root"
        kind = EDGE_KINDS[(self.value - 1) % 4].value
        return f"{kind}-{'use' if self.value > 4 else 'define'}"


N_TREE_EDGE_TYPES = len(TreeEdgeType)


def _bfs(adjacency, root, k, visited, allowed):
    """Level-synchronous BFS up to ``k`` hops; edges into visited nodes are dropped."""
    edges = []
    frontier = [root]
    for _ in range(k):
        nxt = []
        for node in sorted(frontier):
            for other, kind in adjacency[node]:
                if kind not in allowed or other in visited:
                    continue
                visited.add(other)
                edges.append((node, other, kind))
                nxt.append(other)
        if not nxt:
            break
        frontier = nxt
    return edges


def slice_use_flow(g: EnhancedDFG, root, k: int, visited: set) -> list:
    """Forward slice: ``(u, v, kind)`` edges reachable from ``root`` within ``k`` hops.

    ``u`` is the endpoint nearer the root. ``visited`` is updated in place.
    """
    return _bfs(g.out_edges, root, k, visited, EDGE_KINDS)


def slice_define_flow(g: EnhancedDFG, root, k: int, visited: set, follow_c: bool = True) -> list:
    """Backward slice along reversed edges; edges are reported as ``(near, far, kind)``."""
    allowed = EDGE_KINDS if follow_c else tuple(e for e in EDGE_KINDS if e is not EdgeKind.C)
    return _bfs(g.in_edges, root, k, visited, allowed)


@dataclass
class DataFlowTree:
    root: int
    k: int
    parent: dict = field(default_factory=dict)    # child -> (parent, TreeEdgeType)
    depth: dict = field(default_factory=dict)
    order: list = field(default_factory=list)     # root first, then discovery order

    @property
    def nodes(self):
        return list(self.order)

    def __len__(self):
        return len(self.order)

    def edge_type(self, node) -> TreeEdgeType:
        if node == self.root:
            return TreeEdgeType.ROOT
        return self.parent[node][1]

    def children(self):
        kids = {n: [] for n in self.order}
        for c in self.order[1:]:
            kids[self.parent[c][0]].append(c)
        return kids

    @property
    def max_depth(self):
        return max(self.depth.values())

    def to_json(self, g: Optional[EnhancedDFG] = None, vocab: Optional[Vocab] = None) -> dict:
        nodes = []
        for n in self.order:
            d = {"id": n, "edge_type": self.edge_type(n).token}
            if g is not None:
                node = g.nodes[n]
                if vocab is not None:
                    d["feature_onehot_index"] = vocab.slot(node)
                d["cdp"] = g.cdp.get(n, -1) if node.is_vnode else -1
            nodes.append(d)
        return {"root": self.root, "k": self.k, "nodes": nodes,
                "parent": {str(c): p for c, (p, _) in self.parent.items()}}


@dataclass
class TreeSet:
    instance: int
    trees: list
    label: Optional[bool] = None


def build_tree(g: EnhancedDFG, root, k: int = DEFAULT_K, follow_c: bool = True) -> DataFlowTree:
    """Fold the use-flow and define-flow slices of v-node ``root`` into one tree.

    The use-flow is sliced first; both slices share one visited set so every
    node gets exactly one parent. Use-flow edges are rotated to point at the
    root and tagged ``*_USE``; define-flow edges are tagged ``*_DEFINE``.
    """
    node = g.nodes.get(root)
    if node is None or not node.is_vnode:
        raise ValueError(f"tree root {root} is not a v-node")
    if k < 0:
        raise ValueError("k must be >= 0")
    visited = {root}
    use = slice_use_flow(g, root, k, visited)
    define = slice_define_flow(g, root, k, visited, follow_c)
    tree = DataFlowTree(root=root, k=k, depth={root: 0}, order=[root])
    for edges, is_use in ((use, True), (define, False)):
        for near, far, kind in edges:
            tree.parent[far] = (near, TreeEdgeType.of(kind, is_use))
            tree.depth[far] = tree.depth[near] + 1
            tree.order.append(far)
    return tree


def trees_for_instance(g: EnhancedDFG, instance: int, k: int = DEFAULT_K, follow_c: bool = True) -> TreeSet:
    vnodes = g.instances.get(instance)
    if vnodes is None:
        raise KeyError(f"unknown variable instance {instance}")
    if not vnodes:
        raise ValueError(f"instance {instance} has no live-variables")
    return TreeSet(instance, [build_tree(g, v, k, follow_c) for v in vnodes], g.labels.get(instance))


def dump_trees(treesets, g: EnhancedDFG, vocab: Optional[Vocab] = None) -> str:
    doc = [{"instance": ts.instance, "label": ts.label,
            "trees": [t.to_json(g, vocab) for t in ts.trees]} for ts in treesets]
    return json.dumps(doc, indent=1)
