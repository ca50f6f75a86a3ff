"""Enhanced data-flow graph: o-nodes, v-nodes and d/i/c/r edges."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .trace import EventKind, Liveness, Trace, analyze_liveness

CDP_MAX = 0xFFFF
UNMEASURED = -1
DEFAULT_COMPARISONS = frozenset({"cmp", "test"})
LIVEVAR = "<livevar>"
UNK = "<unk>"


class EdgeKind(str, Enum):
    D = "d"
    I = "i"
    C = "c"
    R = "r"


EDGE_KINDS = (EdgeKind.D, EdgeKind.I, EdgeKind.C, EdgeKind.R)


@dataclass(frozen=True, slots=True)
class Node:
    kind: str                      # "o" | "v"
    opcode: Optional[str] = None   # o-nodes
    event: Optional[int] = None    # o-nodes
    live_var: Optional[int] = None  # v-nodes

    @property
    def is_vnode(self):
        return self.kind == "v"

    @property
    def is_onode(self):
        return self.kind == "o"


@dataclass
class EnhancedDFG:
    """Directed multigraph over o-nodes and v-nodes.

    ``nodes`` maps node id to :class:`Node` in creation order. ``cdp`` holds the
    measured global control dependency of v-nodes (``-1`` when unmeasured).
    ``instances`` maps a variable-instance id to its v-node ids in definition
    order, with ``labels``/``names`` carrying ground truth where known.
    """

    nodes: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)
    cdp: dict = field(default_factory=dict)
    opcode_vocab: dict = field(default_factory=dict)
    instances: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    names: dict = field(default_factory=dict)
    program: str = ""

    def __post_init__(self):
        self._adj = None

    # -- construction helpers
    def add_node(self, node: Node) -> int:
        nid = len(self.nodes)
        while nid in self.nodes:
            nid += 1
        self.nodes[nid] = node
        if node.is_vnode:
            self.cdp[nid] = UNMEASURED
        elif node.opcode not in self.opcode_vocab:
            self.opcode_vocab[node.opcode] = len(self.opcode_vocab)
        self._adj = None
        return nid

    def add_edge(self, src, dst, kind: EdgeKind):
        self.edges.append((src, dst, EdgeKind(kind)))
        self._adj = None

    # -- queries
    def vnodes(self):
        return [n for n, node in self.nodes.items() if node.is_vnode]

    def onodes(self):
        return [n for n, node in self.nodes.items() if node.is_onode]

    def _build_adj(self):
        out = {n: [] for n in self.nodes}
        inc = {n: [] for n in self.nodes}
        for s, d, k in self.edges:
            out[s].append((d, k))
            inc[d].append((s, k))
        order = {k: i for i, k in enumerate(EDGE_KINDS)}
        for lst in (out, inc):
            for n in lst:
                lst[n].sort(key=lambda e: (e[0], order[e[1]]))
        self._adj = (out, inc)

    @property
    def out_edges(self):
        if self._adj is None:
            self._build_adj()
        return self._adj[0]

    @property
    def in_edges(self):
        if self._adj is None:
            self._build_adj()
        return self._adj[1]

    def undirected_neighbors(self):
        nbrs = {n: set() for n in self.nodes}
        for s, d, _ in self.edges:
            if s != d:
                nbrs[s].add(d)
                nbrs[d].add(s)
        return nbrs

    def copy(self) -> "EnhancedDFG":
        g = EnhancedDFG(dict(self.nodes), list(self.edges), dict(self.cdp), dict(self.opcode_vocab),
                        {k: list(v) for k, v in self.instances.items()},
                        dict(self.labels), dict(self.names), self.program)
        return g

    def without_cdp(self) -> "EnhancedDFG":
        g = self.copy()
        g.cdp = {n: UNMEASURED for n in g.cdp}
        return g

    # -- serialization
    def to_json(self) -> dict:
        nodes = []
        for nid, node in self.nodes.items():
            if node.is_onode:
                d = {"id": nid, "kind": "o", "opcode": node.opcode}
                if node.event is not None:
                    d["event"] = node.event
            else:
                d = {"id": nid, "kind": "v", "live_var": node.live_var, "cdp": self.cdp.get(nid, UNMEASURED)}
            nodes.append(d)
        doc = {
            "program": self.program,
            "nodes": nodes,
            "edges": [{"src": s, "dst": d, "kind": k.value} for s, d, k in self.edges],
        }
        if self.instances:
            doc["instances"] = [
                {"id": i, "vnodes": v, "label": self.labels.get(i), "name": self.names.get(i)}
                for i, v in self.instances.items()
            ]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "EnhancedDFG":
        g = cls(program=doc.get("program", ""))
        for nd in doc["nodes"]:
            nid = int(nd["id"])
            if nd["kind"] == "o":
                node = Node("o", opcode=nd["opcode"], event=nd.get("event"))
            elif nd["kind"] == "v":
                node = Node("v", live_var=nd.get("live_var"))
            else:
                raise ValueError(f"unknown node kind {nd['kind']!r}")
            if nid in g.nodes:
                raise ValueError(f"duplicate node id {nid}")
            g.nodes[nid] = node
            if node.is_vnode:
                g.cdp[nid] = int(nd.get("cdp", UNMEASURED))
            elif node.opcode not in g.opcode_vocab:
                g.opcode_vocab[node.opcode] = len(g.opcode_vocab)
        for ed in doc["edges"]:
            s, d = int(ed["src"]), int(ed["dst"])
            if s not in g.nodes or d not in g.nodes:
                raise ValueError(f"edge {s}->{d} references an unknown node")
            g.edges.append((s, d, EdgeKind(ed["kind"])))
        for inst in doc.get("instances", ()):
            i = int(inst["id"])
            g.instances[i] = [int(v) for v in inst["vnodes"]]
            if inst.get("label") is not None:
                g.labels[i] = bool(inst["label"])
            if inst.get("name") is not None:
                g.names[i] = inst["name"]
        return g

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "EnhancedDFG":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build_dfg(trace: Trace, liveness: Optional[Liveness] = None,
              comparisons=DEFAULT_COMPARISONS) -> EnhancedDFG:
    """Build the enhanced data-flow graph of ``trace``.

    Registers never become nodes. A register carries the o-node that last
    wrote it (``D`` edges chain o-nodes through registers) and the most recent
    memory value it was derived from, which feeds ``I`` edges for addresses
    computed from it and ``C`` edges when it reaches a comparison.
    """
    if liveness is None:
        liveness = analyze_liveness(trace)
    g = EnhancedDFG(program=trace.program)
    lv_node = {}
    reg_onode = {}
    reg_origin = {}
    seen = set()

    def edge(s, d, kind):
        key = (s, d, kind)
        if key not in seen:
            seen.add(key)
            g.add_edge(s, d, kind)

    def vnode(lv_id):
        nid = lv_node.get(lv_id)
        if nid is None:
            nid = g.add_node(Node("v", live_var=lv_id))
            lv_node[lv_id] = nid
            inst = liveness.live_vars[lv_id].instance
            chain = g.instances.setdefault(inst, [])
            if chain:
                edge(chain[-1], nid, EdgeKind.R)
            chain.append(nid)
        return nid

    for idx, ev in enumerate(trace.events):
        if ev.kind is not EventKind.INS or (not ev.reads and not ev.writes):
            continue
        mem_reads = liveness.mem_reads.get(idx, ())
        mem_writes = liveness.mem_writes.get(idx, ())
        reg_srcs = [reg_onode[o.name] for o in ev.reads if o.kind == "reg" and o.name in reg_onode]
        if not mem_reads and not mem_writes and not reg_srcs:
            # pure register/immediate work on untracked data
            for o in ev.writes:
                if o.kind == "reg":
                    reg_onode.pop(o.name, None)
                    reg_origin.pop(o.name, None)
            continue

        read_vnodes = [vnode(lv) for lv in mem_reads]
        onode = g.add_node(Node("o", opcode=ev.opcode, event=idx))
        for v in read_vnodes:
            edge(v, onode, EdgeKind.D)
        for src in reg_srcs:
            edge(src, onode, EdgeKind.D)

        # implicit flow through pointers
        for o in ev.reads + ev.writes:
            if o.kind == "mem" and o.via is not None:
                origin = reg_origin.get(o.via)
                if origin is not None:
                    edge(origin, onode, EdgeKind.I)

        if ev.opcode in comparisons:
            cond = list(read_vnodes)
            for o in ev.reads:
                if o.kind == "reg" and reg_origin.get(o.name) is not None:
                    cond.append(reg_origin[o.name])
            for v in cond:
                edge(v, onode, EdgeKind.C)

        origin = read_vnodes[-1] if read_vnodes else None
        if origin is None:
            for o in reversed(ev.reads):
                if o.kind == "reg" and reg_origin.get(o.name) is not None:
                    origin = reg_origin[o.name]
                    break
        for o in ev.writes:
            if o.kind == "reg":
                reg_onode[o.name] = onode
                if origin is None:
                    reg_origin.pop(o.name, None)
                else:
                    reg_origin[o.name] = origin
        for lv in mem_writes:
            edge(onode, vnode(lv), EdgeKind.D)

    for inst in liveness.instances:
        if inst.id in g.instances:
            if inst.label is not None:
                g.labels[inst.id] = inst.label
            if inst.name is not None:
                g.names[inst.id] = inst.name
    return g


def attach_cdp(g: EnhancedDFG, measurements: dict) -> EnhancedDFG:
    """Return a copy of ``g`` whose instance v-nodes carry their measured ``n``."""
    out = g.copy()
    for inst, n in measurements.items():
        if inst not in out.instances:
            raise KeyError(f"unknown variable instance {inst}")
        n = int(n)
        if not UNMEASURED <= n <= CDP_MAX:
            raise ValueError(f"control dependency {n} outside [-1, {CDP_MAX}]")
        for v in out.instances[inst]:
            out.cdp[v] = n
    return out


def scale_cdp(n) -> float:
    return -1.0 if n is None or n < 0 else n / CDP_MAX


# ---------------------------------------------------------------------------
# features

class Vocab:
    """Opcode vocabulary frozen on training graphs.

    Slots are laid out as ``[opcodes..., LIVEVAR, UNK]``.
    """

    def __init__(self, opcodes=()):
        self.index = {}
        for op in opcodes:
            if op not in self.index:
                self.index[op] = len(self.index)

    @classmethod
    def from_graphs(cls, graphs):
        ops = set()
        for g in graphs:
            ops.update(node.opcode for node in g.nodes.values() if node.is_onode)
        return cls(sorted(ops))

    def __len__(self):
        return len(self.index)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.index == other.index

    @property
    def livevar_slot(self):
        return len(self.index)

    @property
    def unk_slot(self):
        return len(self.index) + 1

    @property
    def n_slots(self):
        return len(self.index) + 2

    def slot(self, node: Node) -> int:
        if node.is_vnode:
            return self.livevar_slot
        return self.index.get(node.opcode, self.unk_slot)

    def to_list(self):
        return sorted(self.index, key=self.index.get)


@dataclass(frozen=True)
class NodeFeature:
    onehot: np.ndarray
    cdp_scaled: float

    @property
    def slot(self) -> int:
        return int(np.argmax(self.onehot))


def node_features(g: EnhancedDFG, vocab: Vocab) -> dict:
    out = {}
    for nid, node in g.nodes.items():
        onehot = np.zeros(vocab.n_slots)
        onehot[vocab.slot(node)] = 1.0
        cdp = scale_cdp(g.cdp.get(nid)) if node.is_vnode else -1.0
        out[nid] = NodeFeature(onehot, cdp)
    return out


def feature_columns(g: EnhancedDFG, vocab: Vocab, ids):
    """Vectorised form of :func:`node_features` for ``ids``: (slot indices, scaled cdp)."""
    slots = np.empty(len(ids), dtype=np.int64)
    cdp = np.empty(len(ids))
    nodes, gcdp = g.nodes, g.cdp
    for i, nid in enumerate(ids):
        node = nodes[nid]
        slots[i] = vocab.slot(node)
        cdp[i] = scale_cdp(gcdp.get(nid)) if node.kind == "v" else -1.0
    return slots, cdp
