"""A small reverse-mode autodiff tape over dense 2-D float64 arrays.

Every primitive is a method of :class:`Tape`. It computes its value eagerly and
appends a backward closure; :meth:`Tape.backward` replays the closures in
reverse order, accumulating into ``Tensor.grad``. Parameters are leaf tensors
shared across tapes, so gradients from several uses simply add up.

Row-vector convention: a layer computes ``x @ W`` with ``W`` of shape
``(fan_in, fan_out)``.
"""
from __future__ import annotations

import json

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(1, -1)
        elif data.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {data.shape}")
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def item(self) -> float:
        return float(self.data[0, 0])

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def param(data, name="") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def const(data) -> Tensor:
    return Tensor(data)


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


sigmoid_np = _sigmoid


class SparseBlocks:
    """Square sparse matrices ``[B_0 | B_1 | ...]`` kept side by side for one product."""

    __slots__ = ("blocks", "n", "stacked", "stacked_t")

    def __init__(self, blocks):
        self.blocks = list(blocks)
        if not self.blocks:
            raise ShapeError("need at least one block")
        self.n = self.blocks[0].shape[0]
        if any(b.shape != (self.n, self.n) for b in self.blocks):
            raise ShapeError("blocks must share one square shape")
        self.stacked = sp.hstack(self.blocks, format="csr")
        self.stacked_t = self.stacked.T.tocsr()

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]


class Tape:
    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def _out(self, data, inputs, backward):
        needs = any(t.requires_grad for t in inputs)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = needs
        out.name = ""
        if needs:
            self.records.append((out, backward))
        return out

    def record(self, data, inputs, backward):
        """Register a custom primitive. ``backward(g)`` must push grads into ``inputs``."""
        return self._out(np.asarray(data, dtype=np.float64), inputs, backward)

    # -- primitives
    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul {a.shape} @ {b.shape}")

        def back(g):
            if a.requires_grad:
                a.accumulate(g @ b.data.T)
            if b.requires_grad:
                b.accumulate(a.data.T @ g)
        return self._out(a.data @ b.data, (a, b), back)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; ``b`` may be a single row broadcast over ``a``'s rows."""
        if a.shape == b.shape:
            def back(g):
                if a.requires_grad:
                    a.accumulate(g)
                if b.requires_grad:
                    b.accumulate(g)
        elif b.shape == (1, a.shape[1]):
            def back(g):
                if a.requires_grad:
                    a.accumulate(g)
                if b.requires_grad:
                    b.accumulate(g.sum(axis=0, keepdims=True))
        else:
            raise ShapeError(f"add {a.shape} + {b.shape}")
        return self._out(a.data + b.data, (a, b), back)

    def hadamard(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"hadamard {a.shape} * {b.shape}")

        def back(g):
            if a.requires_grad:
                a.accumulate(g * b.data)
            if b.requires_grad:
                b.accumulate(g * a.data)
        return self._out(a.data * b.data, (a, b), back)

    def sigmoid(self, a: Tensor) -> Tensor:
        y = _sigmoid(a.data)

        def back(g):
            a.accumulate(g * y * (1.0 - y))
        return self._out(y, (a,), back)

    def tanh(self, a: Tensor) -> Tensor:
        y = np.tanh(a.data)

        def back(g):
            a.accumulate(g * (1.0 - y * y))
        return self._out(y, (a,), back)

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0

        def back(g):
            a.accumulate(g * mask)
        return self._out(a.data * mask, (a,), back)

    def identity(self, a: Tensor) -> Tensor:
        return a

    def scale(self, a: Tensor, s: float) -> Tensor:
        s = float(s)

        def back(g):
            a.accumulate(g * s)
        return self._out(a.data * s, (a,), back)

    def sum_rows(self, a: Tensor) -> Tensor:
        """Column-wise sum over rows: ``(n, c) -> (1, c)``."""
        def back(g):
            a.accumulate(np.broadcast_to(g, a.shape))
        return self._out(a.data.sum(axis=0, keepdims=True), (a,), back)

    def mean_rows(self, a: Tensor) -> Tensor:
        n = a.shape[0]
        if n == 0:
            raise ShapeError("mean over zero rows")

        def back(g):
            a.accumulate(np.broadcast_to(g / n, a.shape))
        return self._out(a.data.mean(axis=0, keepdims=True), (a,), back)

    def max_rows(self, a: Tensor) -> Tensor:
        """Column-wise max over rows; the subgradient goes to the first argmax row."""
        if a.shape[0] == 0:
            raise ShapeError("max over zero rows")
        idx = a.data.argmax(axis=0)
        cols = np.arange(a.shape[1])

        def back(g):
            ga = np.zeros(a.shape)
            ga[idx, cols] = g[0]
            a.accumulate(ga)
        return self._out(a.data[idx, cols][None, :], (a,), back)

    def concat_rows(self, *parts: Tensor) -> Tensor:
        if not parts:
            raise ShapeError("concat of nothing")
        width = parts[0].shape[1]
        if any(p.shape[1] != width for p in parts):
            raise ShapeError("concat_rows needs equal column counts")
        bounds = np.cumsum([0] + [p.shape[0] for p in parts])

        def back(g):
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                if p.requires_grad:
                    p.accumulate(g[lo:hi])
        return self._out(np.vstack([p.data for p in parts]), parts, back)

    def cols(self, a: Tensor, start: int, stop: int) -> Tensor:
        def back(g):
            ga = np.zeros(a.shape)
            ga[:, start:stop] = g
            a.accumulate(ga)
        return self._out(a.data[:, start:stop], (a,), back)

    def rows(self, a: Tensor, index) -> Tensor:
        index = np.asarray(index, dtype=np.int64)

        def back(g):
            ga = np.zeros(a.shape)
            np.add.at(ga, index, g)
            a.accumulate(ga)
        return self._out(a.data[index], (a,), back)

    def block_spmm(self, blocks, z: Tensor, width: int) -> Tensor:
        """``sum_b blocks[b] @ z[:, b*width:(b+1)*width]`` with constant (sparse) blocks."""
        if not isinstance(blocks, SparseBlocks):
            blocks = SparseBlocks(blocks)
        nb, n = len(blocks), blocks.n
        if z.shape != (n, width * nb):
            raise ShapeError(f"block_spmm expects ({n}, {nb}x{width}), got {z.shape}")
        # (n, nb*w) -> (nb*n, w): row block b holds z's column block b
        zs = z.data.reshape(n, nb, width).transpose(1, 0, 2).reshape(nb * n, width)
        out = np.asarray(blocks.stacked @ zs)

        def back(g):
            gz = np.asarray(blocks.stacked_t @ g)
            z.accumulate(gz.reshape(nb, n, width).transpose(1, 0, 2).reshape(n, nb * width))
        return self._out(out, (z,), back)

    def bce_with_logits(self, z: Tensor, y: float) -> Tensor:
        """Binary cross-entropy of ``sigmoid(z)`` against target ``y`` (1x1 input)."""
        if z.shape != (1, 1):
            raise ShapeError("bce expects a 1x1 logit")
        x = z.data[0, 0]
        loss = max(x, 0.0) - x * y + np.log1p(np.exp(-abs(x)))
        p = float(_sigmoid(z.data)[0, 0])

        def back(g):
            z.accumulate(g * (p - y))
        return self._out(np.array([[loss]]), (z,), back)

    # -- replay
    def backward(self, loss: Tensor) -> None:
        if not self.records:
            return
        if loss.shape != (1, 1):
            raise ShapeError("backward needs a 1x1 loss")
        loss.grad = np.ones((1, 1)) if loss.grad is None else loss.grad + 1.0
        for out, back in reversed(self.records):
            if out.grad is not None:
                back(out.grad)
        self.records.clear()


def grad_check(f, params, eps: float = 1e-5, max_coords=None, rng=None) -> float:
    """Max relative error between tape gradients and central differences.

    ``f()`` must build a fresh tape, returning ``(tape, loss)``. The error per
    coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    for p in params:
        p.zero_grad()
    tape, loss = f()
    tape.backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for p, ga in zip(params, analytic):
        coords = list(np.ndindex(p.shape))
        if max_coords is not None and len(coords) > max_coords:
            picks = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in picks]
        for c in coords:
            orig = p.data[c]
            p.data[c] = orig + eps
            up = f()[1].item()
            p.data[c] = orig - eps
            down = f()[1].item()
            p.data[c] = orig
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(ga[c] - num) / max(1.0, abs(ga[c])))
    for p in params:
        p.zero_grad()
    return worst


def init_uniform(rng, fan_in, shape, name="") -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return param(rng.uniform(-bound, bound, size=shape), name)


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1 - b1) * g
            v *= b2
            g = g * g
            g *= 1 - b2
            v += g
            np.sqrt(v, out=g)
            g += self.eps
            np.divide(m, g, out=g)
            g *= lr_t
            p.data -= g

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# checkpoints: JSON {"name": {"shape": [r, c], "values": [...row-major...]}}

def save_params(params: dict, path) -> None:
    doc = {name: {"shape": list(t.shape), "values": t.data.ravel().tolist()} for name, t in params.items()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    return {name: param(np.array(e["values"], dtype=np.float64).reshape(e["shape"]), name)
            for name, e in doc.items()}
