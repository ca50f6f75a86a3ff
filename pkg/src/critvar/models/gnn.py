"""Relational graph convolution with bi-directional propagation (BRGCN) and the
single-relation, forward-only ConvGNN baseline.

One BRGCN layer::

    h_i' = act( sum_r [ sum_{j in IN_i^r}  W_r^in  h_j / c_ir
                      + sum_{k in OUT_i^r} W_r^out h_k / c_ir ] + W_0 h_i )

with ``c_ir = |IN_i^r| + |OUT_i^r|`` counted on the full graph.
"""
from __future__ import annotations

from collections import deque

import numpy as np
import scipy.sparse as sp

from ..autodiff import SparseBlocks, Tape, Tensor, init_uniform
from ..dfg import EDGE_KINDS, EnhancedDFG

ACTIVATIONS = ("relu", "tanh", "identity")


def _act(tape: Tape, name: str, t: Tensor) -> Tensor:
    if name == "relu":
        return tape.relu(t)
    if name == "tanh":
        return tape.tanh(t)
    if name == "identity":
        return t
    raise ValueError(f"unknown activation {name!r}")


class GnnParams:
    """Per-layer weights ``(fan_in, n_blocks * H)``.

    BRGCN blocks are ordered ``d-in, d-out, i-in, i-out, c-in, c-out, r-in,
    r-out, self``; ConvGNN uses ``in, self``.
    """

    def __init__(self, layers, mode="brgcn", activation="relu"):
        if not layers:
            raise ValueError("a graph network needs at least one layer")
        self.layers = layers
        self.mode = mode
        self.activation = activation

    @staticmethod
    def n_blocks(mode):
        if mode == "brgcn":
            return 2 * len(EDGE_KINDS) + 1
        if mode == "convgnn":
            return 2
        raise ValueError(f"unknown graph network mode {mode!r}")

    @classmethod
    def init(cls, n_features, hidden, n_layers, rng, mode="brgcn", activation="relu"):
        nb = cls.n_blocks(mode)
        layers = []
        fan_in = n_features
        for l in range(n_layers):
            layers.append(init_uniform(rng, fan_in, (fan_in, nb * hidden), f"{mode}.W{l}"))
            fan_in = hidden
        return cls(layers, mode, activation)

    @property
    def hidden(self):
        return self.layers[0].shape[1] // self.n_blocks(self.mode)

    def tensors(self):
        return {t.name or f"{self.mode}.W{l}": t for l, t in enumerate(self.layers)}

    def block(self, layer, index):
        H = self.hidden
        return self.layers[layer].data[:, index * H:(index + 1) * H]

    def relation(self, layer, kind, direction):
        """View of ``W_kind^direction`` for ``layer`` (BRGCN only)."""
        r = EDGE_KINDS.index(kind)
        return self.block(layer, 2 * r + (0 if direction == "in" else 1))

    def self_weight(self, layer):
        return self.block(layer, self.n_blocks(self.mode) - 1)


class GraphBatch:
    """Node subset of a graph with constant propagation blocks and features."""

    __slots__ = ("nodes", "x", "blocks", "targets")

    def __init__(self, nodes, x, blocks, targets):
        self.nodes = nodes
        self.x = x
        self.blocks = blocks if isinstance(blocks, SparseBlocks) else SparseBlocks(blocks)
        self.targets = targets


def neighbors_within(nbrs, sources, radius):
    """Nodes within ``radius`` undirected hops of ``sources``, sorted by id."""
    dist = {s: 0 for s in sources}
    queue = deque(sources)
    while queue:
        n = queue.popleft()
        if dist[n] == radius:
            continue
        for m in nbrs[n]:
            if m not in dist:
                dist[m] = dist[n] + 1
                queue.append(m)
    return sorted(dist)


def propagation_blocks(g: EnhancedDFG, nodes, mode="brgcn"):
    """Normalised sparse propagation matrices restricted to ``nodes``.

    Degrees are always taken from the whole graph so that a restricted batch
    reproduces full-graph values for nodes far enough from the cut.
    """
    pos = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    out_edges, in_edges = g.out_edges, g.in_edges
    if mode == "brgcn":
        kinds = {k: i for i, k in enumerate(EDGE_KINDS)}
        deg = {}

        def degree(node, kind):
            key = (node, kind)
            if key not in deg:
                deg[key] = (sum(1 for _, k in out_edges[node] if k is kind)
                            + sum(1 for _, k in in_edges[node] if k is kind))
            return deg[key]

        entries = [([], [], []) for _ in range(2 * len(EDGE_KINDS))]
        for s in nodes:
            for d, k in out_edges[s]:
                if d not in pos:
                    continue
                r = kinds[k]
                rows, cols, vals = entries[2 * r]          # s is an in-neighbour of d
                rows.append(pos[d]); cols.append(pos[s]); vals.append(1.0 / degree(d, k))
                rows, cols, vals = entries[2 * r + 1]      # d is an out-neighbour of s
                rows.append(pos[s]); cols.append(pos[d]); vals.append(1.0 / degree(s, k))
    elif mode == "convgnn":
        entries = [([], [], [])]
        rows, cols, vals = entries[0]
        for d in nodes:
            srcs = in_edges[d]
            for s, _ in srcs:
                if s in pos:
                    rows.append(pos[d]); cols.append(pos[s]); vals.append(1.0 / len(srcs))
    else:
        raise ValueError(f"unknown graph network mode {mode!r}")
    blocks = [sp.csr_matrix((v, (r, c)), shape=(n, n)) for r, c, v in entries]
    blocks.append(sp.identity(n, format="csr"))
    return blocks


def gnn_forward(tape: Tape, batch: GraphBatch, params: GnnParams) -> Tensor:
    """Layer-``L`` hidden states of every node in ``batch``."""
    h = Tensor(batch.x)
    H = params.hidden
    for W in params.layers:
        z = tape.matmul(h, W)
        h = _act(tape, params.activation, tape.block_spmm(batch.blocks, z, H))
    return h


def graph_batch(g: EnhancedDFG, features, nodes=None, targets=(), mode="brgcn"):
    nodes = sorted(g.nodes) if nodes is None else list(nodes)
    x = features(nodes) if callable(features) else np.asarray([features[n] for n in nodes], dtype=np.float64)
    pos = {n: i for i, n in enumerate(nodes)}
    return GraphBatch(nodes, x, propagation_blocks(g, nodes, mode), np.array([pos[t] for t in targets], dtype=np.int64))


def brgcn_forward(g: EnhancedDFG, features, params: GnnParams, tape: Tape = None) -> dict:
    """Full-graph BRGCN: map node id -> layer-``L`` hidden vector."""
    tape = Tape() if tape is None else tape
    batch = graph_batch(g, features, mode="brgcn")
    h = gnn_forward(tape, batch, params)
    return {n: h.data[i] for i, n in enumerate(batch.nodes)}


def convgnn_forward(g: EnhancedDFG, features, params: GnnParams, tape: Tape = None) -> dict:
    """Full-graph ConvGNN: one shared weight over incoming edges plus a self term."""
    if params.mode != "convgnn":
        raise ValueError("convgnn_forward needs ConvGNN parameters")
    tape = Tape() if tape is None else tape
    batch = graph_batch(g, features, mode="convgnn")
    h = gnn_forward(tape, batch, params)
    return {n: h.data[i] for i, n in enumerate(batch.nodes)}


def count_propagation_paths(g: EnhancedDFG, target, layers: int) -> dict:
    """Walks of length ``layers`` from each node to ``target`` in the undirected
    adjacency with self-loops, i.e. column ``target`` of ``(A + I)^layers``.

    Only sources with a non-zero count are returned.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if target not in g.nodes:
        raise KeyError(f"unknown node {target}")
    nbrs = g.undirected_neighbors()
    counts = {target: 1}
    for _ in range(layers):
        nxt = {}
        for n, c in counts.items():
            nxt[n] = nxt.get(n, 0) + c
            for m in nbrs[n]:
                nxt[m] = nxt.get(m, 0) + c
        counts = nxt
    return dict(sorted(counts.items()))
