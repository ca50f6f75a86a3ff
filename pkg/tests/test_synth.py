from collections import Counter, deque

import networkx as nx
import pytest

from critvar import synth
from critvar.cdp import bb_set, block_diff
from critvar.synth import (Branch, Filler, FlipDirective, FlipPolicy, Label, Op, ToyProgram,
                           VarDecl, generate, generate_program, run)
from critvar.trace import parse_trace, serialize_trace


def _flag_program():
    """Writes ``flag``, then branches on it into a 4-block or a 6-block arm."""
    p = ToyProgram("branchy")
    p.variables = {
        "src": VarDecl("src", "input", synth.INPUT_BASE),
        "flag": VarDecl("flag", "global", synth.GLOBAL_BASE, critical=True, role="flag"),
        "dead": VarDecl("dead", "global", synth.GLOBAL_BASE + 8, critical=False, role="data"),
        "sink": VarDecl("sink", "global", synth.GLOBAL_BASE + 16),
    }
    p.functions["main"] = [
        Label("flag"), Label("dead"),
        Op("mov", "flag", ("src",), 0, 0x1000),
        Op("mov", "dead", ("src",), 0, 0x1004),
        Op("mov", "sink", ("flag",), 0, 0x1008),
        Branch("sink", "nz", 0, [Filler(1, 4, 0x2000)], [Filler(5, 6, 0x3000)], 0, 0x100C),
    ]
    return p


def test_generate_shape_and_determinism():
    progs = generate(1, 6, 31)
    assert [p.name for p in progs] == [f"prog{i}" for i in range(6)]
    assert all(len(p.labeled()) == 31 for p in progs)
    again = generate(1, 6, 31)
    assert [p.to_json() for p in progs] == [p.to_json() for p in again]
    assert generate(2, 1, 31)[0].to_json() != progs[0].to_json()


@pytest.mark.parametrize("n", [0, 3])
def test_too_few_variables(n):
    with pytest.raises(ValueError):
        generate_program("p", 1, n)


@pytest.mark.parametrize("n", [4, 5, 9])
def test_small_programs_keep_every_role_slot(n):
    p = generate_program("p", 3, n)
    assert len(p.labeled()) == n
    assert any(v.critical for v in p.labeled())
    assert any(not v.critical for v in p.labeled())


def _stmts(body):
    for s in body:
        yield s
        if isinstance(s, Branch):
            yield from _stmts(s.then)
            yield from _stmts(s.orelse)


def test_every_non_input_variable_is_written():
    p = generate_program("prog0", 1, 31)
    written = {s.dst for body in p.functions.values() for s in _stmts(body) if isinstance(s, Op)}
    for v in p.variables.values():
        if v.storage != "input":
            assert v.name in written, v.name


def test_program_json_round_trip(small_program):
    doc = small_program.to_json()
    back = ToyProgram.from_json(doc)
    assert back == small_program
    assert back.to_json() == doc


def test_run_is_deterministic_and_serializes(small_program):
    a = run(small_program, 0)
    b = run(small_program, 0)
    assert a.events == b.events
    parsed = parse_trace(serialize_trace(a), a.program, a.input_id)
    assert parsed.events == a.events
    assert run(small_program, 1).input_id == "1"


def test_flip_moves_exactly_the_guarded_blocks():
    p = _flag_program()
    dry = run(p, 0)
    assert bb_set(dry) == {0, 1, 2, 3, 4}
    flipped = run(p, 0, FlipDirective("flag", FlipPolicy.ZERO_ONE))
    assert bb_set(flipped) == {0, 5, 6, 7, 8, 9, 10}
    assert block_diff(bb_set(dry), bb_set(flipped)) == 10
    assert block_diff(bb_set(dry), bb_set(flipped), "oneway") == 6
    # value-preserving-truthiness flips take the same arm
    for policy in (FlipPolicy.BITWISE_NOT, FlipPolicy.XOR_ONE):
        assert bb_set(run(p, 0, FlipDirective("flag", policy))) in (bb_set(dry), bb_set(flipped))


def test_flipping_a_never_read_variable_changes_nothing():
    p = _flag_program()
    dry = run(p, 0)
    for policy in FlipPolicy:
        assert run(p, 0, FlipDirective("dead", policy)).events == dry.events


def test_flip_policies():
    assert FlipPolicy.BITWISE_NOT.apply(0) == synth.MASK64
    assert FlipPolicy.XOR_ONE.apply(6) == 7
    assert FlipPolicy.ZERO_ONE.apply(0) == 1
    assert FlipPolicy.ZERO_ONE.apply(99) == 0


def test_planted_criticals_have_cdp_and_pure_data_has_none(corpus_data):
    for pd in corpus_data:
        n = {m.instance: m.n for m in pd.measurements}
        roles = {inst: pd.program.variables[name].role for inst, name in pd.graph.names.items()}
        for inst, role in roles.items():
            if synth.ROLES[role].critical:
                assert n[inst] > 0, (pd.name, role)
            if role in ("data", "data2"):
                assert n[inst] == 0, (pd.name, role)


# -- local indistinguishability of criticals and their decoys

def _ball(g, sources, radius):
    nbrs = g.undirected_neighbors()
    dist = {s: 0 for s in sources}
    q = deque(sources)
    while q:
        u = q.popleft()
        if dist[u] == radius:
            continue
        for w in nbrs[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                q.append(w)
    own = set(sources)
    h = nx.MultiDiGraph()
    for n in dist:
        node = g.nodes[n]
        h.add_node(n, label=(node.kind, node.opcode, n in own))
    for s, d, k in g.edges:
        if s in dist and d in dist:
            h.add_edge(s, d, kind=k.value)
    return h


def _same(a, b):
    return nx.is_isomorphic(a, b, node_match=lambda x, y: x["label"] == y["label"],
                            edge_match=lambda x, y: sorted(e["kind"] for e in x.values())
                            == sorted(e["kind"] for e in y.values()))


def _mirrored_pairs(pd):
    by_name = {name: inst for inst, name in pd.graph.names.items()}
    groups = {}
    for v in pd.program.labeled():
        if v.role in ("auth", "flag", "data", "data2", "config"):
            groups.setdefault(v.pair, []).append(v)
    for members in groups.values():
        crit = [v for v in members if v.critical]
        for c in crit:
            for d in members:
                if not d.critical:
                    yield by_name[c.name], by_name[d.name]


def test_decoys_match_their_critical_within_six_hops(corpus_data):
    g = corpus_data[0].graph
    pairs = list(_mirrored_pairs(corpus_data[0]))
    assert len(pairs) >= 5
    for c, d in pairs:
        assert _same(_ball(g, g.instances[c], 6), _ball(g, g.instances[d], 6)), (c, d)


def test_far_signature_tells_them_apart(corpus_data):
    g = corpus_data[0].graph
    names = g.names
    role = {inst: corpus_data[0].program.variables[n].role for inst, n in names.items()}
    differing = [(c, d) for c, d in _mirrored_pairs(corpus_data[0])
                 if synth.ROLES[role[c]].signature != synth.ROLES[role[d]].signature]
    assert differing
    for c, d in differing:
        # different label histograms already rule out an isomorphism (and VF2
        # is slow on these large, nearly symmetric balls)
        a, b = _ball(g, g.instances[c], 13), _ball(g, g.instances[d], 13)
        assert Counter(nx.get_node_attributes(a, "label").values()) != \
            Counter(nx.get_node_attributes(b, "label").values()), (c, d)
