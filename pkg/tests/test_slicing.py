import random

import networkx as nx
import pytest

from critvar.dfg import EnhancedDFG, Vocab
from critvar.slicing import (N_TREE_EDGE_TYPES, TreeEdgeType, build_tree, dump_trees,
                             slice_define_flow, slice_use_flow, trees_for_instance)

from helpers import make_graph, random_graph


def check_tree(g, tree, k):
    assert tree.depth[tree.root] == 0
    assert g.nodes[tree.root].is_vnode
    assert len(tree.parent) == len(tree.order) - 1
    assert len(set(tree.order)) == len(tree.order)
    for child, (par, etype) in tree.parent.items():
        assert tree.depth[child] == tree.depth[par] + 1 <= k
        assert etype is not TreeEdgeType.ROOT
    # walking parents always ends at the root, so there are no cycles
    for n in tree.order:
        seen = set()
        while n != tree.root:
            assert n not in seen
            seen.add(n)
            n = tree.parent[n][0]


def test_use_flow_chain():
    g = make_graph("vov", [(0, 1, "d"), (1, 2, "d")])
    assert [(a, b) for a, b, _ in slice_use_flow(g, 0, 2, {0})] == [(0, 1), (1, 2)]


def test_use_flow_diamond_keeps_lower_id_path():
    g = make_graph("voov", [(0, 1, "d"), (0, 2, "d"), (1, 3, "d"), (2, 3, "d")])
    edges = slice_use_flow(g, 0, 2, {0})
    assert [(a, b) for a, b, _ in edges] == [(0, 1), (0, 2), (1, 3)]


def test_zero_depth():
    g = make_graph("vov", [(0, 1, "d"), (1, 2, "d")])
    assert slice_use_flow(g, 0, 0, {0}) == []
    tree = build_tree(g, 0, k=0)
    assert tree.order == [0]


def test_define_flow_one_hop_and_shared_visited():
    g = make_graph("ov", [(0, 1, "d")])
    assert [(a, b) for a, b, _ in slice_define_flow(g, 1, 1, {1})] == [(1, 0)]
    assert slice_define_flow(g, 1, 1, {1, 0}) == []


def test_define_flow_bounded_on_long_chain():
    n = 40
    g = make_graph("vo" * (n // 2), [(i, i + 1, "d") for i in range(n - 1)])
    edges = slice_define_flow(g, n - 1, 15, {n - 1})
    assert len(edges) == 15
    assert edges[-1][1] == n - 1 - 15


def test_three_node_tree_types():
    g = make_graph("ovo", [(0, 1, "d"), (1, 2, "d")])
    tree = build_tree(g, 1)
    assert sorted(tree.order) == [0, 1, 2]
    assert tree.edge_type(2) is TreeEdgeType.D_USE
    assert tree.edge_type(0) is TreeEdgeType.D_DEFINE
    assert tree.edge_type(1) is TreeEdgeType.ROOT


def test_isolated_vnode_and_bad_root():
    g = make_graph("vo", [])
    assert build_tree(g, 0).order == [0]
    with pytest.raises(ValueError):
        build_tree(g, 1)


def test_edge_type_tokens():
    assert N_TREE_EDGE_TYPES == 9
    assert {t.token for t in TreeEdgeType} >= {"root", "d-define", "c-use", "r-define"}


def oracle_nodes(g, root, k, follow_c=True):
    """Independent reachability with a shared visited set, via networkx."""
    G = nx.DiGraph()
    G.add_nodes_from(g.nodes)
    G.add_edges_from((s, d) for s, d, kind in g.edges if follow_c or kind.value != "c")
    use = set(nx.single_source_shortest_path_length(G, root, cutoff=k))
    R = G.reverse(copy=True)
    R.remove_nodes_from(use - {root})
    define = set(nx.single_source_shortest_path_length(R, root, cutoff=k))
    return use | define


def test_fixture_graph_root7(fixtures_dir):
    g = EnhancedDFG.load(fixtures_dir / "listing1.json")
    tree = build_tree(g, 7, k=15)
    check_tree(g, tree, 15)
    assert set(tree.order) == oracle_nodes(g, 7, 15) == {1, 2, 3, 4, 5, 7, 10, 12, 14, 15}
    assert tree.edge_type(10) is TreeEdgeType.D_USE
    assert tree.edge_type(5) is TreeEdgeType.D_DEFINE


def test_random_graph_trees_match_oracle():
    rng = random.Random(3)
    for _ in range(150):
        g = random_graph(rng)
        k = rng.randint(0, 6)
        for root in g.vnodes():
            tree = build_tree(g, root, k)
            check_tree(g, tree, k)
            assert set(tree.order) == oracle_nodes(g, root, k)
            assert build_tree(g, root, k).parent == tree.parent


def test_follow_c_flag():
    g = make_graph("vo", [(0, 1, "c")])
    g.add_node(g.nodes[0])
    g.add_edge(2, 0, g.edges[0][2])
    # 2 -c-> 0: only reachable backward from 0 when C edges are followed
    assert 2 in build_tree(g, 0, 3, follow_c=True).order
    assert 2 not in build_tree(g, 0, 3, follow_c=False).order


def test_trees_for_instance():
    g = make_graph("vov", [(0, 1, "d"), (1, 2, "d"), (0, 2, "r")])
    g.instances = {0: [0, 2], 1: []}
    g.labels = {0: True}
    ts = trees_for_instance(g, 0)
    assert len(ts.trees) == 2 and ts.label is True
    assert [t.root for t in ts.trees] == [0, 2]
    with pytest.raises(ValueError):
        trees_for_instance(g, 1)
    with pytest.raises(KeyError):
        trees_for_instance(g, 5)


def test_many_live_variables():
    n = 25
    kinds = "v" * n
    g = make_graph(kinds, [(i, i + 1, "r") for i in range(n - 1)])
    g.instances = {0: list(range(n))}
    assert len(trees_for_instance(g, 0).trees) == 25


def test_dump_trees(fixtures_dir):
    g = EnhancedDFG.load(fixtures_dir / "listing1.json")
    import json
    doc = json.loads(dump_trees([trees_for_instance(g, 3)], g, Vocab.from_graphs([g])))
    (tree,) = doc[0]["trees"]
    assert tree["root"] == 7 and tree["k"] == 15
    assert {"id", "feature_onehot_index", "cdp", "edge_type"} <= set(tree["nodes"][0])
    assert tree["parent"]["10"] == 7
