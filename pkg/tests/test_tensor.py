import numpy as np
import pytest

from svhdr.numerics import (GradCheckError, ShapeError, Tensor, concat, grad_check, matmul, no_grad, reshape,
                            split, stack, transpose)
from svhdr.numerics.gradcheck import directional_grad_check, random_inputs
from svhdr.numerics.tensor import make

PRIMITIVE_TOL = 1e-6


def test_scalar_chain_rule():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x * 2.0 + x / 4.0 - 1.0
    y.backward()
    assert y.data == pytest.approx(18.75 - 1.0)
    assert x.grad == pytest.approx(4 * 3.0 + 0.25)


def test_broadcast_gradient_is_unbroadcast():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    (a * b).sum().backward()
    assert b.grad.shape == (3,)
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = x * 3.0
    (y + y).sum().backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_scalar_operand_keeps_dtype():
    x = Tensor(np.ones(3, dtype=np.float32))
    assert (2.0 * x).dtype == np.float32
    assert (x - 1.0).dtype == np.float32


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


PRIMITIVE_CASES = [
    ("add", lambda a, b: a + b, [(3, 4), (4,)]),
    ("sub", lambda a, b: a - b, [(3, 4), (3, 1)]),
    ("mul", lambda a, b: a * b, [(2, 3, 4), (3, 4)]),
    ("div", lambda a, b: a / (b * b + 1.0), [(3, 4), (3, 4)]),
    ("matmul", matmul, [(2, 3, 5), (5, 4)]),
    ("matmul_batched", matmul, [(2, 3, 5), (2, 5, 4)]),
    ("reshape", lambda a: reshape(a, (6, 2)), [(3, 4)]),
    ("transpose", lambda a: transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    ("sum_axis", lambda a: a.sum(axis=1, keepdims=True), [(3, 4, 2)]),
    ("mean", lambda a: a.mean(axis=(0, 2)), [(3, 4, 2)]),
    ("getitem", lambda a: a[1:, ::2], [(4, 5)]),
    ("getitem_fancy", lambda a: a[np.array([0, 2, 0])], [(3, 4)]),
    ("concat", lambda a, b: concat([a, b], axis=1), [(2, 3), (2, 5)]),
    ("split", lambda a: split(a, 3, axis=-1)[1] * 2.0 + split(a, 3, axis=-1)[0].sum(), [(4, 6)]),
    ("stack", lambda a, b: stack([a, b], axis=1), [(2, 3), (2, 3)]),
]


@pytest.mark.parametrize("name,fn,shapes", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients(name, fn, shapes):
    assert grad_check(fn, random_inputs(shapes, seed=len(name)), name=name) < PRIMITIVE_TOL


def _broken_square(x):
    return make(x.data ** 2, (x,), lambda g: (g * 2.0 * x.data * 1.01,))


def test_grad_check_detects_wrong_gradient():
    # oracle for the oracle: a 1% gradient error must be visible
    err = grad_check(_broken_square, random_inputs([(5,)], seed=1))
    assert 0.005 < err < 0.02
    err = directional_grad_check(_broken_square, random_inputs([(5,)], seed=1))
    assert 0.005 < err < 0.02


def test_grad_check_requires_float64():
    with pytest.raises(GradCheckError):
        grad_check(lambda a: a * 2.0, [Tensor(np.ones(3, dtype=np.float32))])


def test_grad_check_rejects_nonfinite():
    with pytest.raises(GradCheckError), np.errstate(divide="ignore"):
        grad_check(lambda a: a / 0.0, [Tensor(np.ones(3))])
