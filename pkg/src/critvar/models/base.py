"""Sample container, input validation, and the shared estimator training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..autodiff import Adam, Tape
from ..dfg import EnhancedDFG, Vocab

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(eq=False)
class VariableSample:
    """One variable-usage instance to classify.

    ``graph`` is the (shared) program graph, ``vnodes`` the instance's v-nodes
    in definition order, and ``trees`` its data-flow trees when the sample was
    assembled for a tree model.
    """

    program: str
    instance: int
    graph: EnhancedDFG
    vnodes: tuple
    trees: Optional[list] = None
    label: Optional[bool] = None
    name: Optional[str] = None


def check_samples(X, need_trees: bool = False) -> list:
    if isinstance(X, VariableSample):
        raise TypeError("expected a sequence of VariableSample, got a single sample")
    X = list(X)
    if not X:
        raise ValueError("no samples given")
    for i, s in enumerate(X):
        if not isinstance(s, VariableSample):
            raise TypeError(f"sample {i} is {type(s).__name__}, not VariableSample")
        if not s.vnodes:
            raise ValueError(f"sample {i} ({s.program}:{s.instance}) has no live-variables")
        if need_trees and not s.trees:
            raise ValueError(f"sample {i} ({s.program}:{s.instance}) carries no data-flow trees")
    return X


def check_labels(X, y) -> np.ndarray:
    if y is None:
        y = [s.label for s in X]
    if any(v is None for v in y):
        raise ValueError("every training sample needs a label")
    y = np.asarray(y).astype(bool)
    if y.shape != (len(X),):
        raise ValueError(f"got {len(y)} labels for {len(X)} samples")
    return y


def unique_graphs(X):
    seen = {}
    for s in X:
        seen.setdefault(id(s.graph), s.graph)
    return list(seen.values())


class VariableClassifier(ClassifierMixin, BaseEstimator):
    """Base class: subclasses provide ``_init_params``, ``_encode`` and ``_logit``.

    Training is per-sample Adam on binary cross-entropy; the opcode vocabulary
    is frozen on the training graphs.
    """

    _needs_trees = False

    def _more_tags(self):
        return {"non_deterministic": False, "requires_y": True}

    def fit(self, X, y=None):
        X = check_samples(X, self._needs_trees)
        y = check_labels(X, y)
        rng = np.random.default_rng(self.random_state)
        self.vocab_ = Vocab.from_graphs(unique_graphs(X))
        self.classes_ = np.array([False, True])
        self.params_ = self._init_params(rng)
        encoded = self._encode(X)
        opt = Adam(self.params_.values(), lr=self.lr)
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            total = 0.0
            for i in rng.permutation(len(X)):
                tape = Tape()
                loss = tape.bce_with_logits(self._logit(tape, encoded[i]), float(y[i]))
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"{type(self).__name__}: non-finite loss at epoch {epoch} on "
                        f"{X[i].program}:{X[i].instance}")
                tape.backward(loss)
                opt.step()
                opt.zero_grad()
                total += value
            self.loss_curve_.append(total / len(X))
            if self.verbose:
                log.info("%s epoch %d loss %.4f", type(self).__name__, epoch, self.loss_curve_[-1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_samples(X, self._needs_trees)
        encoded = self._encode(X)
        return np.array([self._logit(Tape(), e).item() for e in encoded])

    def predict_proba(self, X):
        z = self.decision_function(X)
        p = 1.0 / (1.0 + np.exp(-z))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.predict_proba(X)[:, 1] >= 0.5

    def get_param_tensors(self) -> dict:
        check_is_fitted(self, "params_")
        return dict(self.params_)
