"""Variable classifiers with a scikit-learn estimator interface.

Each takes a list of :class:`~critvar.models.base.VariableSample` as ``X``.
"""
from __future__ import annotations

import numpy as np

from ..autodiff import Tensor
from ..dfg import feature_columns
from ..slicing import N_TREE_EDGE_TYPES
from .base import VariableClassifier, unique_graphs
from .gnn import GnnParams, GraphBatch, gnn_forward, neighbors_within, propagation_blocks
from .heads import POOLINGS, MlpParams, OutputParams, mlp_forward, output_logit, pool
from .treelstm import ForestBatch, TreeLstmParams, tree_lstm_forest


def _check_pooling(pooling):
    if pooling not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")


class TreeLSTMClassifier(VariableClassifier):
    """Child-Sum Tree-LSTM over each live-variable's data-flow tree, pooled per instance.

    Parameters
    ----------
    hidden : int
        Hidden/cell dimension of the Tree-LSTM.
    pooling : {"max", "avg", "sum"}
        Aggregation of root states across the instance's trees.
    epochs, lr : training schedule (per-sample Adam updates).
    random_state : int
        Seed for initialisation and shuffling.
    """

    _needs_trees = True

    def __init__(self, hidden=64, pooling="max", epochs=50, lr=1e-3, random_state=0, verbose=False):
        self.hidden = hidden
        self.pooling = pooling
        self.epochs = epochs
        self.lr = lr
        self.random_state = random_state
        self.verbose = verbose

    @property
    def n_features_(self):
        return self.vocab_.n_slots + N_TREE_EDGE_TYPES + 1

    def _init_params(self, rng):
        _check_pooling(self.pooling)
        self.tree_params_ = TreeLstmParams.init(self.n_features_, self.hidden, rng)
        self.out_params_ = OutputParams.init(self.hidden, rng)
        return {**self.tree_params_.tensors(), **self.out_params_.tensors()}

    def tree_features(self, g, tree):
        slots, cdp = feature_columns(g, self.vocab_, tree.order)
        n = len(tree.order)
        x = np.zeros((n, self.n_features_))
        rows = np.arange(n)
        x[rows, slots] = 1.0
        etype = np.fromiter((int(tree.edge_type(v)) for v in tree.order), dtype=np.int64, count=n)
        x[rows, self.vocab_.n_slots + etype] = 1.0
        x[:, -1] = cdp
        return x

    def _encode(self, X):
        return [ForestBatch.from_trees(s.trees, lambda t, g=s.graph: self.tree_features(g, t)) for s in X]

    def _logit(self, tape, batch):
        roots = tree_lstm_forest(tape, batch, self.tree_params_)
        return output_logit(tape, pool(tape, roots, self.pooling), self.out_params_)


class BRGCNClassifier(VariableClassifier):
    """Stacked relational graph convolution; the instance's v-node states are pooled.

    Parameters
    ----------
    layers : int
        Number of propagation layers.
    hidden : int
    pooling : {"max", "avg", "sum"}
    activation : {"relu", "tanh", "identity"}
    epochs, lr, random_state : see :class:`TreeLSTMClassifier`.
    """

    _mode = "brgcn"

    def __init__(self, layers=6, hidden=64, pooling="max", activation="relu", epochs=50, lr=1e-3,
                 random_state=0, verbose=False):
        self.layers = layers
        self.hidden = hidden
        self.pooling = pooling
        self.activation = activation
        self.epochs = epochs
        self.lr = lr
        self.random_state = random_state
        self.verbose = verbose

    @property
    def n_features_(self):
        return self.vocab_.n_slots + 1

    def _init_params(self, rng):
        _check_pooling(self.pooling)
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        self.gnn_params_ = GnnParams.init(self.n_features_, self.hidden, self.layers, rng,
                                          mode=self._mode, activation=self.activation)
        self.out_params_ = OutputParams.init(self.hidden, rng)
        return {**self.gnn_params_.tensors(), **self.out_params_.tensors()}

    def node_features(self, g, ids):
        slots, cdp = feature_columns(g, self.vocab_, ids)
        x = np.zeros((len(ids), self.n_features_))
        x[np.arange(len(ids)), slots] = 1.0
        x[:, -1] = cdp
        return x

    def _encode(self, X):
        nbrs = {id(g): g.undirected_neighbors() for g in unique_graphs(X)}
        out = []
        for s in X:
            ball = neighbors_within(nbrs[id(s.graph)], s.vnodes, self.layers)
            pos = {n: i for i, n in enumerate(ball)}
            out.append(GraphBatch(ball, self.node_features(s.graph, ball),
                                  propagation_blocks(s.graph, ball, self._mode),
                                  np.array([pos[v] for v in s.vnodes], dtype=np.int64)))
        return out

    def _logit(self, tape, batch):
        h = gnn_forward(tape, batch, self.gnn_params_)
        return output_logit(tape, pool(tape, tape.rows(h, batch.targets), self.pooling), self.out_params_)


class ConvGNNClassifier(BRGCNClassifier):
    """Graph convolution with one weight shared by all edge kinds, incoming edges only."""

    _mode = "convgnn"


class MLPVariableClassifier(VariableClassifier):
    """Per-v-node two-layer perceptron on raw features; no neighbourhood information."""

    def __init__(self, hidden=64, pooling="max", epochs=50, lr=1e-3, random_state=0, verbose=False):
        self.hidden = hidden
        self.pooling = pooling
        self.epochs = epochs
        self.lr = lr
        self.random_state = random_state
        self.verbose = verbose

    @property
    def n_features_(self):
        return self.vocab_.n_slots + 1

    def _init_params(self, rng):
        _check_pooling(self.pooling)
        self.mlp_params_ = MlpParams.init(self.n_features_, self.hidden, rng)
        self.out_params_ = OutputParams.init(self.hidden, rng)
        return {**self.mlp_params_.tensors(), **self.out_params_.tensors()}

    def _encode(self, X):
        out = []
        for s in X:
            slots, cdp = feature_columns(s.graph, self.vocab_, s.vnodes)
            x = np.zeros((len(s.vnodes), self.n_features_))
            x[np.arange(len(s.vnodes)), slots] = 1.0
            x[:, -1] = cdp
            out.append(x)
        return out

    def _logit(self, tape, x):
        h = mlp_forward(tape, Tensor(x), self.mlp_params_)
        return output_logit(tape, pool(tape, h, self.pooling), self.out_params_)


MODELS = {
    "treelstm": TreeLSTMClassifier,
    "brgcn": BRGCNClassifier,
    "convgnn": ConvGNNClassifier,
    "mlp": MLPVariableClassifier,
}
