import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from critvar.autodiff import (Adam, ShapeError, SparseBlocks, Tape, Tensor, const, grad_check,
                              init_uniform, load_params, param, save_params)


def rand_param(rng, shape, name=""):
    return param(rng.normal(size=shape), name)


def test_matmul_example():
    t = Tape()
    assert t.matmul(const([[1, 2]]), const([[3], [4]])).data.tolist() == [[11.0]]


def test_sigmoid_at_zero():
    assert Tape().sigmoid(const(0.0)).item() == 0.5


def test_max_rows_routes_to_argmax():
    a = param([[1.0, 5.0], [3.0, 2.0]])
    t = Tape()
    m = t.max_rows(a)
    assert m.data.tolist() == [[3.0, 5.0]]
    t.backward(t.sum_rows(t.matmul(m, const([[1.0], [1.0]]))))
    assert a.grad.tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_backward_square_sum():
    w = param([[1.0, 2.0, 3.0]])
    t = Tape()
    loss = t.matmul(t.hadamard(w, w), const(np.ones((3, 1))))
    t.backward(loss)
    assert w.grad.tolist() == [[2.0, 4.0, 6.0]]


def test_backward_sigmoid_grad():
    w = param(0.0)
    t = Tape()
    t.backward(t.sigmoid(w))
    assert w.grad[0, 0] == pytest.approx(0.25)


def test_backward_on_empty_tape_is_noop():
    Tape().backward(const(1.0))


def test_shape_errors():
    t = Tape()
    with pytest.raises(ShapeError):
        t.matmul(const(np.ones((2, 3))), const(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        t.add(const(np.ones((2, 3))), const(np.ones((3, 2))))
    with pytest.raises(ShapeError):
        t.hadamard(const(np.ones((1, 2))), const(np.ones((1, 3))))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 2, 2)))


def test_accumulation_doubles_for_repeated_use():
    w = param([[1.5, -2.0]])
    t = Tape()
    v = const([[1.0], [1.0]])
    t.backward(t.matmul(w, v))
    once = w.grad.copy()
    w.zero_grad()
    t = Tape()
    t.backward(t.matmul(t.add(w, w), v))
    assert np.array_equal(w.grad, 2 * once)


def test_grad_check_examples():
    w = param([[1.0, 2.0, 3.0]])

    def square_sum():
        t = Tape()
        return t, t.matmul(t.hadamard(w, w), const(np.ones((3, 1))))
    assert grad_check(square_sum, [w]) < 1e-6

    s = param(0.0)

    def sig():
        t = Tape()
        return t, t.sigmoid(s)
    assert grad_check(sig, [s]) < 1e-6

    rng = np.random.default_rng(0)
    W1, W2, W3 = rand_param(rng, (4, 5)), rand_param(rng, (5, 3)), rand_param(rng, (3, 1))
    x = const(rng.normal(size=(2, 4)))

    def three_layers():
        t = Tape()
        h = t.tanh(t.matmul(x, W1))
        h = t.sigmoid(t.matmul(h, W2))
        return t, t.sum_rows(t.matmul(h, W3))
    assert grad_check(three_layers, [W1, W2, W3]) < 1e-4


PRIMITIVES = {
    "matmul": lambda t, a, b: t.matmul(a, b),
    "add": lambda t, a, b: t.add(a, b),
    "hadamard": lambda t, a, b: t.hadamard(a, b),
    "sigmoid": lambda t, a, b: t.sigmoid(a),
    "tanh": lambda t, a, b: t.tanh(a),
    "relu": lambda t, a, b: t.relu(a),
    "scale": lambda t, a, b: t.scale(a, -1.7),
    "sum_rows": lambda t, a, b: t.sum_rows(a),
    "mean_rows": lambda t, a, b: t.mean_rows(a),
    "max_rows": lambda t, a, b: t.max_rows(a),
    "concat_rows": lambda t, a, b: t.concat_rows(a, b),
    "cols": lambda t, a, b: t.cols(a, 1, 3),
    "rows": lambda t, a, b: t.rows(a, np.array([2, 0, 2])),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(abs(hash(name)) % 2 ** 32)
    a = rand_param(rng, (3, 4))
    b = rand_param(rng, (4, 4) if name == "matmul" else (3, 4))
    if name == "relu":
        a.data[np.abs(a.data) < 0.1] = 0.5           # stay away from the kink
    probe = const(rng.normal(size=(4, 1)))

    def f():
        t = Tape()
        y = PRIMITIVES[name](t, a, b)
        return t, t.sum_rows(t.matmul(y, const(probe.data[:y.shape[1]])))
    assert grad_check(f, [a, b]) < 1e-6


def test_add_broadcasts_row_bias():
    a, b = param(np.ones((3, 2))), param([[1.0, 2.0]])
    t = Tape()
    out = t.add(a, b)
    t.backward(t.sum_rows(t.matmul(out, const([[1.0], [1.0]]))))
    assert b.grad.tolist() == [[3.0, 3.0]]


def test_block_spmm_matches_dense_and_gradients():
    rng = np.random.default_rng(1)
    n, w = 5, 3
    blocks = [sp.random(n, n, density=0.4, random_state=i, format="csr") for i in range(3)]
    z = rand_param(rng, (n, 3 * w))
    t = Tape()
    out = t.block_spmm(blocks, z, w)
    dense = sum(blocks[b].toarray() @ z.data[:, b * w:(b + 1) * w] for b in range(3))
    assert np.allclose(out.data, dense)
    probe = const(rng.normal(size=(w, 1)))

    def f():
        t = Tape()
        return t, t.sum_rows(t.matmul(t.block_spmm(SparseBlocks(blocks), z, w), probe))
    assert grad_check(f, [z]) < 1e-6
    with pytest.raises(ShapeError):
        Tape().block_spmm(blocks, z, w + 1)


def test_bce_with_logits():
    for y in (0.0, 1.0):
        z = param(0.3)

        def f():
            t = Tape()
            return t, t.bce_with_logits(z, y)
        p = 1 / (1 + np.exp(-0.3))
        assert f()[1].item() == pytest.approx(-(y * np.log(p) + (1 - y) * np.log(1 - p)))
        assert grad_check(f, [z]) < 1e-8
    big = Tape().bce_with_logits(const(800.0), 0.0)
    assert np.isfinite(big.item())


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_random_compositions(r, c, seed):
    rng = np.random.default_rng(seed)
    A, B = rand_param(rng, (r, c)), rand_param(rng, (c, c))
    bias = rand_param(rng, (1, c))

    def f():
        t = Tape()
        h = t.tanh(t.add(t.matmul(A, B), bias))
        h = t.hadamard(h, t.sigmoid(h))
        return t, t.sum_rows(t.matmul(t.mean_rows(h), const(np.ones((c, 1)))))
    assert grad_check(f, [A, B, bias]) < 1e-6


def test_init_uniform_bounds_and_seed():
    a = init_uniform(np.random.default_rng(5), 16, (16, 8))
    b = init_uniform(np.random.default_rng(5), 16, (16, 8))
    assert np.array_equal(a.data, b.data)
    assert np.all(np.abs(a.data) <= 0.25)
    assert a.requires_grad


def test_adam_minimises_quadratic():
    w = param([[3.0, -2.0]])
    opt = Adam([w], lr=0.1)
    for _ in range(300):
        t = Tape()
        t.backward(t.matmul(t.hadamard(w, w), const([[1.0], [1.0]])))
        opt.step()
        opt.zero_grad()
    assert np.abs(w.data).max() < 0.05


def test_adam_first_step_is_lr_sized():
    w = param([[1.0]])
    w.grad = np.array([[0.3]])
    Adam([w], lr=1e-3).step()
    assert w.data[0, 0] == pytest.approx(1.0 - 1e-3, rel=1e-6)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    params = {"W": rand_param(rng, (3, 2)), "b": rand_param(rng, (1, 2))}
    save_params(params, tmp_path / "p.json")
    back = load_params(tmp_path / "p.json")
    assert set(back) == {"W", "b"}
    assert all(np.array_equal(back[k].data, params[k].data) for k in params)
