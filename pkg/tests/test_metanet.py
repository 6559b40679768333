import numpy as np
import pytest

from coapt.errors import DimensionError, ParameterError
from coapt.metanet import bias, init_meta_net
from coapt.tensor import GradTape, Tensor, finite_diff_check, mul, sum_all

DIM = 6
RNG = np.random.default_rng(17)


def features():
    return Tensor(RNG.normal(size=(1, DIM))), Tensor(RNG.normal(size=(1, DIM)))


def test_zero_output_at_init():
    meta = init_meta_net(DIM, seed=3)
    for _ in range(5):
        t, f = features()
        np.testing.assert_array_equal(bias(t, f, meta).data, np.zeros((1, DIM)))


def test_default_hidden_width_is_half_dim_rounded_up():
    assert init_meta_net(DIM).hidden == DIM // 2
    assert init_meta_net(7).hidden == 4


def test_same_seed_same_first_layer():
    a = init_meta_net(DIM, seed=9)
    b = init_meta_net(DIM, seed=9)
    np.testing.assert_array_equal(a.w1.data, b.w1.data)
    np.testing.assert_array_equal(a.w2.data, 0.0)
    np.testing.assert_array_equal(a.b2.data, 0.0)


def test_output_dimension():
    meta = init_meta_net(DIM, seed=0)
    t, f = features()
    assert bias(t, f, meta).shape == (1, DIM)
    affine = init_meta_net(DIM, seed=0, affine=True)
    assert bias(t, f, affine).shape == (1, 2 * DIM)


def test_depends_on_both_arguments_once_trained():
    meta = init_meta_net(DIM, seed=1)
    # simulate a few train steps by perturbing the output layer
    meta.w2.data += RNG.normal(0.0, 0.3, size=meta.w2.shape)
    t, f = features()
    base = bias(t, f, meta).data.copy()
    f2 = Tensor(f.data + 0.1)
    t2 = Tensor(t.data + 0.1)
    assert np.abs(bias(t, f2, meta).data - base).max() > 1e-9
    assert np.abs(bias(t2, f, meta).data - base).max() > 1e-9


def test_dimension_mismatch():
    meta = init_meta_net(DIM, seed=0)
    with pytest.raises(DimensionError):
        bias(Tensor(np.zeros((1, DIM + 1))), Tensor(np.zeros((1, DIM))), meta)


def test_invalid_sizes():
    with pytest.raises(ParameterError):
        init_meta_net(0)
    with pytest.raises(ParameterError):
        init_meta_net(DIM, hidden=0)


def test_gradients_match_finite_differences():
    meta = init_meta_net(DIM, seed=5)
    meta.w2.data += RNG.normal(0.0, 0.2, size=meta.w2.shape)
    t = Tensor(RNG.normal(size=(1, DIM)), requires_grad=True)
    f = Tensor(RNG.normal(size=(1, DIM)), requires_grad=True)
    w = Tensor(RNG.normal(size=(1, DIM)))
    params = [t, f] + meta.trainable_tensors()

    def loss_fn(ps):
        return sum_all(mul(bias(ps[0], ps[1], meta), w))

    assert finite_diff_check(loss_fn, params) <= 1e-6
