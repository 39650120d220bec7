import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from svhdr.errors import ContractError
from svhdr.numerics import ShapeError, Tensor, grad_check
from svhdr.transforms import (TonemapParams, assemble_input, exposure_normalize, gamma_encode, inverse_tonemap, loss,
                              network_inputs, split_input, tonemap, tonemapped_mse)


def test_tonemap_anchors():
    assert tonemap(np.array(0.0)) == 0.0
    assert tonemap(np.array(1.0)) == pytest.approx(1.0, abs=1e-15)
    assert abs(tonemap(np.array(1 / 5000)) - 0.08138) < 1e-4
    # closed form: log(2) / log(5001)
    assert tonemap(np.array(1 / 5000)) == pytest.approx(np.log(2) / np.log(5001), rel=1e-12)


@given(arrays(np.float64, 8, elements=st.floats(0, 50)))
def test_tonemap_inverse_and_monotone(h):
    v = tonemap(h)
    np.testing.assert_allclose(inverse_tonemap(v), h, rtol=1e-9, atol=1e-12)
    order = np.argsort(h, kind="stable")
    assert np.all(np.diff(v[order]) >= 0)


def test_tonemap_rejects_negative():
    with pytest.raises(ContractError):
        tonemap(np.array([-0.1]))
    with pytest.raises(ContractError):
        TonemapParams(mu=0)


def test_exposure_normalization_roundtrip():
    ldr = np.random.default_rng(0).uniform(0, 1, (4, 4, 3)).astype(np.float32)
    lin = exposure_normalize(ldr, 8.0)
    np.testing.assert_allclose(lin, ldr.astype(np.float64) ** 2.2 / 8.0, rtol=1e-6)
    np.testing.assert_allclose(gamma_encode(lin, 8.0), ldr, rtol=1e-5)
    with pytest.raises(ContractError):
        exposure_normalize(ldr, 0.0)


def test_input_assembly():
    bracket = [np.full((2, 2, 3), v, dtype=np.float32) for v in (0.2, 0.5, 0.9)]
    ins = network_inputs(bracket, (1, 8, 64))
    assert len(ins) == 3 and ins[0].shape == (2, 2, 6)
    ldr, lin = split_input(ins[2])
    np.testing.assert_allclose(lin, 0.9 ** 2.2 / 64, rtol=1e-6)
    with pytest.raises(ShapeError):
        assemble_input(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


def test_loss_is_unnormalized_norm():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0, 1, (5, 5, 3)), rng.uniform(0, 1, (5, 5, 3))
    d = tonemap(a) - tonemap(b)
    assert float(loss(a, b).data) == pytest.approx(np.sqrt(np.sum(d * d)))
    assert float(loss(a, b, reduction="mean").data) == pytest.approx(np.sqrt(np.mean(d * d)))
    assert float(loss(a, b, reduction="mean").data) ** 2 == pytest.approx(tonemapped_mse(a, b))
    with pytest.raises(ShapeError):
        loss(a, b[:4])


def test_loss_gradient_and_zero_point():
    rng = np.random.default_rng(2)
    target = rng.uniform(0, 1, (4, 4, 3))
    pred = Tensor(rng.uniform(0.1, 1, (4, 4, 3)))
    assert grad_check(lambda p: loss(p, target), [pred]) < 1e-6
    same = Tensor(target.copy(), requires_grad=True)
    loss(same, target).backward()
    assert not np.any(same.grad)
