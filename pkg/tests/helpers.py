"""Small graph builders shared by the tests."""
import random

from critvar.dfg import EdgeKind, EnhancedDFG, Node

KINDS = {"d": EdgeKind.D, "i": EdgeKind.I, "c": EdgeKind.C, "r": EdgeKind.R}


def make_graph(kinds, edges, opcodes=None):
    """``kinds`` is a string of 'o'/'v' per node id; edges are ``(src, dst, 'd'|'i'|'c'|'r')``."""
    g = EnhancedDFG()
    opcodes = opcodes or {}
    for i, k in enumerate(kinds):
        if k == "o":
            g.add_node(Node("o", opcode=opcodes.get(i, "mov"), event=i))
        else:
            g.add_node(Node("v", live_var=i))
            g.cdp[i] = -1
    for s, d, k in edges:
        g.add_edge(s, d, KINDS[k])
    return g


def random_graph(rng: random.Random, n_max=30, p=None):
    """Random bipartite-ish directed graph with mixed edge kinds, at least one v-node."""
    n = rng.randint(1, n_max)
    kinds = "".join(rng.choice("ov") for _ in range(n))
    if "v" not in kinds:
        kinds = "v" + kinds[1:]
    p = p if p is not None else rng.uniform(0.02, 0.3)
    edges = set()
    for s in range(n):
        for d in range(n):
            if s == d or rng.random() >= p:
                continue
            if kinds[s] == "v" and kinds[d] == "v":
                k = "r"
            elif kinds[s] == "v" and kinds[d] == "o":
                k = rng.choice("dic")
            else:
                k = "d"
            edges.add((s, d, k))
    return make_graph(kinds, sorted(edges), {i: rng.choice(["mov", "add", "cmp", "xor"]) for i in range(n)})
