"""Pooling, the sigmoid output layer, and the MLP baseline's node encoder."""
from __future__ import annotations

import numpy as np

from ..autodiff import Tape, Tensor, init_uniform, param, sigmoid_np

POOLINGS = ("max", "avg", "sum")
THRESHOLD = 0.5


def pool(tape: Tape, vectors: Tensor, mode: str = "max") -> Tensor:
    """Aggregate the rows of ``vectors`` into one ``(1, H)`` representation."""
    if vectors.shape[0] == 0:
        raise ValueError("cannot pool an empty set of vectors")
    if mode == "max":
        return tape.max_rows(vectors)
    if mode == "avg":
        return tape.mean_rows(vectors)
    if mode == "sum":
        return tape.sum_rows(vectors)
    raise ValueError(f"unknown pooling {mode!r}")


class OutputParams:
    def __init__(self, A, b):
        self.A, self.b = A, b     # A: (H, 1), b: (1, 1)

    @classmethod
    def init(cls, hidden, rng):
        return cls(init_uniform(rng, hidden, (hidden, 1), "out.A"), init_uniform(rng, hidden, (1, 1), "out.b"))

    @classmethod
    def zeros(cls, hidden):
        return cls(param(np.zeros((hidden, 1)), "out.A"), param(np.zeros((1, 1)), "out.b"))

    def tensors(self):
        return {"out.A": self.A, "out.b": self.b}


def output_logit(tape: Tape, pooled: Tensor, params: OutputParams) -> Tensor:
    return tape.add(tape.matmul(pooled, params.A), params.b)


def predict(pooled, params: OutputParams) -> float:
    """Probability that the pooled variable representation is critical."""
    h = pooled.data if isinstance(pooled, Tensor) else np.atleast_2d(np.asarray(pooled, dtype=np.float64))
    return float(sigmoid_np(h @ params.A.data + params.b.data)[0, 0])


def classify(prob: float, threshold: float = THRESHOLD) -> bool:
    return prob >= threshold


class MlpParams:
    def __init__(self, W1, b1, W2, b2):
        self.W1, self.b1, self.W2, self.b2 = W1, b1, W2, b2

    @classmethod
    def init(cls, n_features, hidden, rng):
        return cls(init_uniform(rng, n_features, (n_features, hidden), "mlp.W1"),
                   init_uniform(rng, n_features, (1, hidden), "mlp.b1"),
                   init_uniform(rng, hidden, (hidden, hidden), "mlp.W2"),
                   init_uniform(rng, hidden, (1, hidden), "mlp.b2"))

    @classmethod
    def zeros(cls, n_features, hidden):
        return cls(param(np.zeros((n_features, hidden))), param(np.zeros((1, hidden))),
                   param(np.zeros((hidden, hidden))), param(np.zeros((1, hidden))))

    def tensors(self):
        return {"mlp.W1": self.W1, "mlp.b1": self.b1, "mlp.W2": self.W2, "mlp.b2": self.b2}


def mlp_forward(tape: Tape, x: Tensor, params: MlpParams) -> Tensor:
    """Two affine+ReLU layers applied row-wise to raw v-node features."""
    h = tape.relu(tape.add(tape.matmul(x, params.W1), params.b1))
    return tape.relu(tape.add(tape.matmul(h, params.W2), params.b2))
