import numpy as np
import pytest

from core.autograd import (
    Tape,
    Tensor,
    backward,
    elementwise,
    frames,
    grad,
    log_softmax,
    matmul,
    reduce,
    softmax,
)
from core.exceptions import DomainError, ShapeError, TapeError


def analytic_grad(op, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    tape = Tape()
    v = tape.variable(x)
    loss = (op(v) * Tensor(weights)).sum()
    return grad(loss, [v])[0]


def plain_value(op, weights):
    return lambda x: float((op(Tensor(x)).data * weights).sum())


def test_add_and_identity():
    assert np.array_equal(elementwise("add", [1, 2], [3, 4]).data, [4, 6])
    x = np.array([0.5, -1.5, 2.0])
    assert np.array_equal(elementwise("mul", x, np.ones_like(x)).data, x)


def test_square_gradient():
    tape = Tape()
    x = tape.variable([1.0, 2.0, 3.0])
    (g,) = grad(x.square().sum(), [x])
    assert np.allclose(g, [2.0, 4.0, 6.0])


def test_reductions():
    assert reduce("mean", [2.0, 4.0, 6.0]).item() == pytest.approx(4.0)
    assert np.array_equal(reduce("sum", [[1, 2], [3, 4]], axis=1).data, [3, 7])
    assert reduce("sum", [[1, 2], [3, 4]], axis=1, keepdims=True).shape == (2, 1)

    tape = Tape()
    x = tape.variable(np.arange(5.0))
    (g,) = grad(x.mean(), [x])
    assert np.allclose(g, [0.2] * 5)

    with pytest.raises(ShapeError):
        reduce("sum", [[1, 2]], axis=2)


def test_matmul_values_and_errors():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), m).data, m)
    assert np.array_equal(matmul([[1.0, 0.0]], [[5.0], [7.0]]).data, [[5.0]])
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_gradient_matches_finite_differences(rng, numeric_grad, rel_err):
    a = rng.uniform(-2, 2, size=(3, 4))
    b = rng.uniform(-2, 2, size=(4, 2))
    w = rng.uniform(-2, 2, size=(3, 2))

    tape = Tape()
    ta, tb = tape.variable(a), tape.variable(b)
    ga, gb = grad((matmul(ta, tb) * Tensor(w)).sum(), [ta, tb])

    na = numeric_grad(lambda v: float((v @ b * w).sum()), a)
    nb = numeric_grad(lambda v: float((a @ v * w).sum()), b)
    assert rel_err(ga, na) < 1e-5
    assert rel_err(gb, nb) < 1e-5


@pytest.mark.parametrize("op_name", ["neg", "abs", "exp", "square", "log", "sqrt"])
def test_unary_gradients(op_name, rng, numeric_grad, rel_err):
    positive = op_name in ("log", "sqrt")
    x = rng.uniform(0.5, 2, size=(3, 4)) if positive else rng.uniform(-2, 2, size=(3, 4))
    w = rng.uniform(-2, 2, size=(3, 4))

    def op(t):
        return elementwise(op_name, t)

    assert rel_err(analytic_grad(op, x, w), numeric_grad(plain_value(op, w), x)) < 1e-5


@pytest.mark.parametrize("op_name", ["add", "sub", "mul", "div"])
def test_binary_gradients_with_broadcast(op_name, rng, numeric_grad, rel_err):
    a = rng.uniform(-2, 2, size=(3, 4))
    b = rng.uniform(0.5, 2, size=(1, 4))
    w = rng.uniform(-2, 2, size=(3, 4))

    tape = Tape()
    ta, tb = tape.variable(a), tape.variable(b)
    ga, gb = grad((elementwise(op_name, ta, tb) * Tensor(w)).sum(), [ta, tb])

    def value(x, y):
        return float((elementwise(op_name, x, y).data * w).sum())

    assert gb.shape == (1, 4)
    assert rel_err(ga, numeric_grad(lambda v: value(v, b), a)) < 1e-5
    assert rel_err(gb, numeric_grad(lambda v: value(a, v), b)) < 1e-5


def test_broadcast_gradient_sums_back():
    tape = Tape()
    a = tape.variable(np.ones((3, 1)))
    b = tape.variable(np.ones((1, 4)))
    ga, gb = grad((a + b).sum(), [a, b])
    assert np.array_equal(ga, np.full((3, 1), 4.0))
    assert np.array_equal(gb, np.full((1, 4), 3.0))


def test_shape_and_domain_errors():
    with pytest.raises(ShapeError):
        elementwise("add", np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(DomainError):
        elementwise("log", [1.0, 0.0])
    with pytest.raises(DomainError):
        elementwise("sqrt", [-1.0])
    with pytest.raises(DomainError):
        elementwise("div", [1.0], [0.0])


def test_softmax_examples():
    assert np.allclose(softmax([0.0, 0.0, 0.0]).data, [1 / 3] * 3)
    assert np.allclose(softmax([0.0, np.log(3.0)]).data, [0.25, 0.75])
    x = np.array([0.3, -1.2, 2.5, 0.0])
    assert np.allclose(softmax(x + 17.0).data, softmax(x).data)
    with pytest.raises(DomainError):
        softmax([0.0, np.nan])


def test_softmax_sums_to_one(rng):
    s = softmax(rng.uniform(-2, 2, size=(5, 7)), axis=1).data
    assert np.all(s > 0)
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("fn", [softmax, log_softmax])
def test_softmax_gradients(fn, rng, numeric_grad, rel_err):
    x = rng.uniform(-2, 2, size=(2, 5))
    w = rng.uniform(-2, 2, size=(2, 5))

    def op(t):
        return fn(t, axis=-1)

    assert rel_err(analytic_grad(op, x, w), numeric_grad(plain_value(op, w), x)) < 1e-5


def test_frames_windows_and_coverage():
    series = np.arange(10.0).reshape(1, 1, 10)
    tape = Tape()
    x = tape.variable(series)
    patches = frames(x, 4, 2)
    assert patches.shape == (1, 1, 4, 4)
    assert np.array_equal(patches.data[0, 0], [[0, 1, 2, 3], [2, 3, 4, 5], [4, 5, 6, 7], [6, 7, 8, 9]])
    (g,) = grad(patches.sum(), [x])
    assert np.array_equal(g.reshape(-1), [1, 1, 2, 2, 2, 2, 2, 2, 1, 1])


def test_frames_gradient(rng, numeric_grad, rel_err):
    x = rng.uniform(-2, 2, size=(2, 3, 12))
    w = rng.uniform(-2, 2, size=(2, 3, 5, 4))

    def op(t):
        return frames(t, 4, 2)

    assert rel_err(analytic_grad(op, x, w), numeric_grad(plain_value(op, w), x)) < 1e-5


def test_backward_seed_and_errors():
    tape = Tape()
    x = tape.variable(np.arange(4.0))
    (g,) = grad(x.sum(), [x])
    assert np.array_equal(g, np.ones(4))

    with pytest.raises(ShapeError):
        backward(x * 2.0, [x])
    with pytest.raises(TapeError):
        backward(Tensor(1.0), [x])
    with pytest.raises(TapeError):
        backward(x.sum(), [Tape().variable([1.0])])


def test_mse_gradient_closed_form(rng):
    y = rng.uniform(-2, 2, size=6)
    tape = Tape()
    y_hat = tape.variable(rng.uniform(-2, 2, size=6))
    (g,) = grad((y_hat - y).square().mean(), [y_hat])
    assert np.allclose(g, 2 * (y_hat.data - y) / 6)


def test_repeated_backward_is_deterministic(rng):
    tape = Tape()
    x = tape.variable(rng.uniform(-2, 2, size=(4, 3)))
    w = tape.variable(rng.uniform(-2, 2, size=(3, 2)))
    hidden = matmul(x, w)
    first = (hidden.square()).mean()
    second = (hidden.exp()).sum()

    g1 = backward(first, [w])[w.node_id].data
    backward(second, [w])
    g2 = backward(first, [w])[w.node_id].data
    assert np.array_equal(g1, g2)


def test_detached_tensors_stay_off_the_tape():
    tape = Tape()
    x = tape.variable([1.0, 2.0])
    constant = Tensor([3.0, 4.0])
    assert not constant.attached
    assert (x * constant).attached
    assert not x.detach().attached
    assert not (constant * 2.0).attached


def test_method_sugar_matches_elementwise(rng):
    x = rng.uniform(-2, 2, size=(2, 5))
    t = Tensor(x)
    assert np.array_equal(t.abs().data, np.abs(x))
    assert np.array_equal(abs(t).data, np.abs(x))
    assert np.array_equal(t.square().data, x * x)

    tape = Tape()
    v = tape.variable(x)
    (g,) = grad(v.abs().mean(axis=-1).sum(), [v])
    assert np.allclose(g, np.sign(x) / 5)
