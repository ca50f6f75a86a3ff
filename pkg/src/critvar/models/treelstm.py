"""Child-Sum Tree-LSTM over data-flow trees.

Gates for node ``j`` with children ``C(j)``::

    h~_j = sum_k h_k
    i_j  = sigmoid(x_j W_i + h~_j U_i + b_i)
    f_jk = sigmoid(x_j W_f + h_k  U_f + b_f)       one per child
    o_j  = sigmoid(x_j W_o + h~_j U_o + b_o)
    u_j  = tanh   (x_j W_u + h~_j U_u + b_u)
    c_j  = i_j * u_j + sum_k f_jk * c_k
    h_j  = o_j * tanh(c_j)

All trees of one sample are evaluated together, one depth level at a time from
the deepest level up to the roots. The whole forest is a single tape record
with a hand-written backward pass.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import Tape, Tensor, init_uniform, param, sigmoid_np


class TreeLstmParams:
    """Gate weights stored fused: ``W`` is ``(F, 4H)`` with column blocks i, o, u, f."""

    GATES = ("i", "o", "u", "f")

    def __init__(self, W, U_iou, U_f, b):
        self.W, self.U_iou, self.U_f, self.b = W, U_iou, U_f, b

    @classmethod
    def init(cls, n_features, hidden, rng):
        return cls(
            init_uniform(rng, n_features, (n_features, 4 * hidden), "tree.W"),
            init_uniform(rng, hidden, (hidden, 3 * hidden), "tree.U_iou"),
            init_uniform(rng, hidden, (hidden, hidden), "tree.U_f"),
            init_uniform(rng, n_features, (1, 4 * hidden), "tree.b"),
        )

    @classmethod
    def zeros(cls, n_features, hidden):
        return cls(param(np.zeros((n_features, 4 * hidden))), param(np.zeros((hidden, 3 * hidden))),
                   param(np.zeros((hidden, hidden))), param(np.zeros((1, 4 * hidden))))

    @property
    def hidden(self):
        return self.U_f.shape[0]

    def tensors(self):
        return {"tree.W": self.W, "tree.U_iou": self.U_iou, "tree.U_f": self.U_f, "tree.b": self.b}

    def gate(self, name):
        """Per-gate views ``(W, U, b)`` of the fused arrays."""
        H = self.hidden
        g = self.GATES.index(name)
        W = self.W.data[:, g * H:(g + 1) * H]
        b = self.b.data[:, g * H:(g + 1) * H]
        U = self.U_f.data if name == "f" else self.U_iou.data[:, g * H:(g + 1) * H]
        return W, U, b


class ForestBatch:
    """Level layout of a set of trees.

    ``levels[d]`` holds feature rows of all depth-``d`` nodes; ``parents[d]``
    gives, for each depth-``d + 1`` node, the row of its parent within level
    ``d``. Level 0 lists the roots in tree order.
    """

    __slots__ = ("levels", "parents", "scatter", "n_trees")

    def __init__(self, levels, parents):
        self.levels = levels
        self.parents = parents
        self.n_trees = levels[0].shape[0]
        self.scatter = []
        for d, p in enumerate(parents):
            s = np.zeros((levels[d].shape[0], len(p)))
            s[p, np.arange(len(p))] = 1.0
            self.scatter.append(s)

    @classmethod
    def from_trees(cls, trees, features):
        """``features(tree)`` returns the feature matrix of ``tree.order``."""
        levels_rows, parent_rows = [], []
        for tree in trees:
            x = features(tree)
            pos = {}
            for row, node in enumerate(tree.order):
                d = tree.depth[node]
                while len(levels_rows) <= d:
                    levels_rows.append([])
                    parent_rows.append([])
                pos[node] = len(levels_rows[d])
                levels_rows[d].append(x[row])
                if d > 0:
                    parent_rows[d].append(pos[tree.parent[node][0]])
        levels = [np.asarray(rows) for rows in levels_rows]
        parents = [np.asarray(p, dtype=np.int64) for p in parent_rows[1:]]
        return cls(levels, parents)


def tree_lstm_forest(tape: Tape, batch: ForestBatch, params: TreeLstmParams) -> Tensor:
    """Root hidden states of every tree in ``batch`` as an ``(n_trees, H)`` tensor."""
    H = params.hidden
    W, Uiou, Uf, b = params.W.data, params.U_iou.data, params.U_f.data, params.b.data
    depth = len(batch.levels)
    saved = [None] * depth
    h_next = c_next = None
    for d in range(depth - 1, -1, -1):
        x = batch.levels[d]
        pre = x @ W + b
        iou = pre[:, :3 * H]
        if d + 1 < depth:
            S = batch.scatter[d]
            p = batch.parents[d]
            ht = S @ h_next
            iou = iou + ht @ Uiou
            f = sigmoid_np(pre[p, 3 * H:] + h_next @ Uf)
            csum = S @ (f * c_next)
        else:
            ht = f = None
            csum = 0.0
        i = sigmoid_np(iou[:, :H])
        o = sigmoid_np(iou[:, H:2 * H])
        u = np.tanh(iou[:, 2 * H:])
        c = i * u + csum
        tc = np.tanh(c)
        h = o * tc
        saved[d] = (ht, f, i, o, u, c, tc, h_next, c_next)
        h_next, c_next = h, c
    roots = h_next

    def back(g_roots):
        gW = np.zeros_like(W)
        gb = np.zeros_like(b)
        gUiou = np.zeros_like(Uiou)
        gUf = np.zeros_like(Uf)
        dh = g_roots
        dc = np.zeros_like(g_roots)
        for d in range(depth):
            ht, f, i, o, u, c, tc, hk, ck = saved[d]
            do = dh * tc
            dct = dc + dh * o * (1.0 - tc * tc)
            diou = np.concatenate(
                [dct * u * i * (1.0 - i), do * o * (1.0 - o), dct * i * (1.0 - u * u)], axis=1)
            dpre = np.zeros((diou.shape[0], 4 * H))
            dpre[:, :3 * H] = diou
            if f is not None:
                S = batch.scatter[d]
                p = batch.parents[d]
                dfc = S.T @ dct
                dck = dfc * f
                dfpre = dfc * ck * f * (1.0 - f)
                dpre[:, 3 * H:] += S @ dfpre
                gUf += hk.T @ dfpre
                gUiou += ht.T @ diou
                dhk = dfpre @ Uf.T + S.T @ (diou @ Uiou.T)
                dh, dc = dhk, dck
            gW += batch.levels[d].T @ dpre
            gb += dpre.sum(axis=0, keepdims=True)
        for t, gr in ((params.W, gW), (params.b, gb), (params.U_iou, gUiou), (params.U_f, gUf)):
            if t.requires_grad:
                t.accumulate(gr)

    inputs = (params.W, params.U_iou, params.U_f, params.b)
    return tape.record(roots, inputs, back)


def tree_lstm_root(tape: Tape, tree, features, params: TreeLstmParams) -> Tensor:
    """Hidden state ``(1, H)`` at the root of one tree.

    ``features`` is either a callable ``tree -> matrix`` or a mapping from node
    id to feature vector.
    """
    if not callable(features):
        table = features
        features = lambda t: np.asarray([table[n] for n in t.order], dtype=np.float64)
    return tree_lstm_forest(tape, ForestBatch.from_trees([tree], features), params)
