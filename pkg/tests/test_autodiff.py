import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmgsim import autodiff as ad
from mmgsim.autodiff import (AdamState, NonFiniteError, ParamStore, ShapeError, TapeError, Tensor,
                             adam_step, backward, grad_check, no_grad)
from mmgsim.nets import MLP, MixedAttentionNet


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(a, Tensor(np.eye(2))).data, a.data)


def test_sigmoid_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_conv1d_hand_value():
    out = ad.conv1d(Tensor([1.0, 2.0, 3.0]), Tensor([1.0, 1.0]))
    assert np.allclose(out.data.ravel(), [3.0, 5.0])


def test_conv1d_against_numpy_correlate():
    rng = np.random.default_rng(0)
    x, k = rng.normal(size=9), rng.normal(size=3)
    out = ad.conv1d(Tensor(x), Tensor(k)).data.ravel()
    assert np.allclose(out, np.correlate(x, k, mode="valid"))


def test_shape_error_names_primitive():
    with pytest.raises(ShapeError) as e:
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert e.value.op == "matmul"
    assert (2, 3) in e.value.shapes


def test_nonfinite_is_checked():
    with pytest.raises(NonFiniteError):
        ad.exp(Tensor([1000.0]))


def test_sum_grad_is_ones():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    backward(ad.tsum(x))
    assert np.array_equal(x.grad, [1.0, 1.0, 1.0])


def test_square_grad():
    x = Tensor(3.0, requires_grad=True)
    backward(ad.mul(x, x))
    assert x.grad == pytest.approx(6.0)


def test_backward_twice_raises():
    x = Tensor(2.0, requires_grad=True)
    y = ad.mul(x, x)
    backward(y)
    with pytest.raises(TapeError):
        backward(y)


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(ad.mul(x, 2.0))


def test_no_grad_records_nothing():
    x = Tensor(2.0, requires_grad=True)
    with no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad


def test_mlp_mse_matches_finite_differences():
    rng = np.random.default_rng(1)
    store = ParamStore()
    net = MLP(store, "m", [3, 5, 1], rng)
    x, y = rng.normal(size=(1, 3)), np.array([[0.3]])

    def loss():
        d = ad.sub(net(Tensor(x)), Tensor(y))
        return ad.mean(ad.mul(d, d))

    assert ad.param_grad_check(loss, [t for _, t in store.items()]) < 1e-4


def test_adam_first_step_hand_value():
    store = ParamStore()
    p = store.add("p", np.array([1.0]))
    p.grad = np.array([1.0])
    adam_step(store, AdamState(store, lr=0.1))
    # bias-corrected m_hat = 1, v_hat = 1, so the step is lr * 1 / (1 + eps)
    assert p.data[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-12)
    assert store.step_count == 1
    assert p.grad is None or not np.any(p.grad)


def test_adam_zero_grad_leaves_param():
    store = ParamStore()
    p = store.add("p", np.array([1.0, -2.0]))
    p.grad = np.zeros(2)
    adam_step(store, AdamState(store, lr=0.1))
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_monotone_against_gradient():
    store = ParamStore()
    p = store.add("p", np.array([0.0]))
    st_ = AdamState(store, lr=0.01)
    values = []
    for _ in range(2):
        p.grad = np.array([2.0])
        adam_step(store, st_)
        values.append(p.data[0])
    assert 0.0 > values[0] > values[1]


def test_adam_missing_grad_names_parameter():
    store = ParamStore()
    store.add("weights", np.ones(2))
    with pytest.raises(ValueError, match="weights"):
        adam_step(store, AdamState(store, lr=0.1))


def test_grad_check_sum_of_squares():
    rng = np.random.default_rng(2)
    assert grad_check(ad.sum_of_squares, rng.normal(size=6)) < 1e-6


def test_grad_check_constant_is_zero():
    assert grad_check(lambda x: Tensor(5.0), np.ones(3)) == 0.0


def test_grad_check_rejects_vector_output():
    with pytest.raises(ShapeError):
        grad_check(lambda x: ad.mul(x, 2.0), np.ones(3))


def test_grad_check_mixed_attention_critic():
    rng = np.random.default_rng(3)
    store = ParamStore()
    net = MixedAttentionNet(store, "q", 7, 1, rng, hidden=16)
    x = rng.normal(size=(4, 7))
    assert grad_check(lambda t: ad.tsum(net(t)), x) < 1e-4


def test_reparam_exact():
    mean, std, noise = np.array([0.5, -1.0]), np.array([2.0, 0.1]), np.array([0.3, -0.7])
    out = ad.gaussian_sample_reparam(Tensor(mean), Tensor(std), noise)
    assert np.array_equal(out.data, mean + std * noise)


def test_log_floor_keeps_finite():
    assert np.isfinite(ad.log(Tensor([0.0]), floor=1e-6).data).all()


def test_minimum_tie_goes_to_first():
    a = Tensor([1.0], requires_grad=True)
    b = Tensor([1.0], requires_grad=True)
    backward(ad.tsum(ad.minimum(a, b)))
    assert a.grad[0] == 1.0 and (b.grad is None or b.grad[0] == 0.0)


def test_paramstore_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(4)
    store = ParamStore()
    store.add("a", rng.normal(size=(3, 2)))
    store.add("b", rng.normal(size=5))
    store.step_count = 7
    path = tmp_path / "ck.json"
    store.save(path)
    back = ParamStore.load(path)
    assert back.step_count == 7
    for name, t in store.items():
        assert np.array_equal(back[name].data, t.data)
    json.loads(path.read_text())


def test_paramstore_rejects_duplicates():
    store = ParamStore()
    store.add("w", np.ones(1))
    with pytest.raises(KeyError):
        store.add("w", np.ones(1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_tanh_gradient_property(xs):
    assert grad_check(lambda t: ad.tsum(ad.tanh(t)), np.array(xs)) < 1e-4
