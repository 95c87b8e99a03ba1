import numpy as np
import pytest

from saec.nn import (Optimizer, ParamSet, ParamSpec, check_same_layout, conv_spec, dense_spec, ema_update,
                     init_params)
from saec.tensor import Tensor

SPEC = dense_spec("fc", 4, 3) + conv_spec("conv", 2, 5, 3)


def scalar_set(value: float, name: str = "w") -> ParamSet:
    return ParamSet({name: Tensor(np.array([value]), requires_grad=True)})


# -- init -----------------------------------------------------------------------


def test_init_is_a_pure_function_of_seed():
    a, b = init_params(SPEC, 7), init_params(SPEC, 7)
    assert list(a) == list(b)
    for name in a:
        assert np.array_equal(a[name].data, b[name].data)
    c = init_params(SPEC, 8)
    assert not np.array_equal(a["fc.w"].data, c["fc.w"].data)


def test_biases_start_at_exactly_zero():
    p = init_params(SPEC, 0)
    assert np.all(p["fc.b"].data == 0.0) and np.all(p["conv.b"].data == 0.0)


def test_weights_are_bounded_by_fan_in():
    p = init_params(SPEC, 0)
    assert np.abs(p["fc.w"].data).max() <= np.sqrt(1 / 4)
    assert np.abs(p["conv.w"].data).max() <= np.sqrt(1 / (2 * 9))


def test_weight_std_matches_uniform_moments():
    # Uniform(-b, b) has std b / sqrt(3); with b = sqrt(1/100) that is sqrt(1/300)
    p = init_params([ParamSpec("w", (1000, 100), fan_in=100)], 3)
    assert abs(p["w"].data.std() / np.sqrt(1 / 300) - 1) < 0.1


def test_zero_fan_in_is_rejected():
    with pytest.raises(ValueError):
        init_params([ParamSpec("w", (0, 3), fan_in=0)], 0)


def test_paramset_rejects_duplicate_names_and_keeps_order():
    p = init_params(SPEC, 0)
    assert list(p) == ["fc.w", "fc.b", "conv.w", "conv.b"]
    with pytest.raises((KeyError, ValueError)):
        p["fc.w"] = Tensor(np.zeros((4, 3)), requires_grad=True)


def test_same_spec_gives_same_layout():
    check_same_layout(init_params(SPEC, 0), init_params(SPEC, 1))
    with pytest.raises(ValueError):
        check_same_layout(init_params(SPEC, 0), init_params(dense_spec("fc", 4, 3), 0))


# -- optimizer -------------------------------------------------------------------


def test_adam_first_step_moves_by_learning_rate():
    p = scalar_set(0.0)
    opt = Optimizer(p, lr=0.1)
    p["w"].grad = np.array([1.0])
    opt.step()
    assert p["w"].data[0] == pytest.approx(-0.1, rel=1e-6)
    assert opt.step_count == 1


def test_constant_gradient_keeps_moving_by_learning_rate():
    p = scalar_set(0.0)
    opt = Optimizer(p, lr=0.1)
    for _ in range(5):
        p["w"].grad = np.array([1.0])
        opt.step()
    # with g constant the bias-corrected ratio m/sqrt(v) stays 1
    assert p["w"].data[0] == pytest.approx(-0.5, rel=1e-6)


def test_zero_gradient_is_a_fixed_point_and_counter_advances():
    p = init_params(SPEC, 0)
    before = {k: t.data.copy() for k, t in p.items()}
    opt = Optimizer(p, lr=0.1)
    for t in p.tensors():
        t.grad = np.zeros(t.shape)
    opt.step()
    opt.step()
    assert opt.step_count == 2
    for k, t in p.items():
        assert np.array_equal(t.data, before[k])


@pytest.mark.parametrize("kind", ["adam", "sgd"])
def test_zero_learning_rate_is_identity(kind):
    p = init_params(SPEC, 0)
    before = {k: t.data.copy() for k, t in p.items()}
    opt = Optimizer(p, lr=0.0, kind=kind)
    rng = np.random.default_rng(0)
    for t in p.tensors():
        t.grad = rng.normal(size=t.shape)
    opt.step()
    for k, t in p.items():
        assert np.array_equal(t.data, before[k])


def test_missing_gradient_raises():
    p = init_params(SPEC, 0)
    opt = Optimizer(p, lr=0.1)
    with pytest.raises(ValueError, match="no gradient"):
        opt.step()


def test_step_leaves_gradients_for_the_caller_to_zero():
    p = scalar_set(1.0)
    opt = Optimizer(p, lr=0.1)
    p["w"].grad = np.array([2.0])
    opt.step()
    assert p["w"].grad[0] == 2.0
    opt.zero_grad()
    assert p["w"].grad is None


def test_identical_gradients_keep_identical_sets_identical():
    a, b = init_params(SPEC, 0), init_params(SPEC, 0)
    oa, ob = Optimizer(a, lr=0.01), Optimizer(b, lr=0.01)
    rng = np.random.default_rng(1)
    for _ in range(3):
        for ta, tb in zip(a.tensors(), b.tensors()):
            g = rng.normal(size=ta.shape)
            ta.grad, tb.grad = g, g.copy()
        oa.step()
        ob.step()
    for k in a:
        assert np.array_equal(a[k].data, b[k].data)


def test_sgd_is_the_plain_gradient_step():
    p = scalar_set(1.0)
    opt = Optimizer(p, lr=0.5, kind="sgd")
    p["w"].grad = np.array([3.0])
    opt.step()
    assert p["w"].data[0] == -0.5


def test_clip_rescales_to_global_norm():
    p = ParamSet({"a": Tensor(np.zeros(1), requires_grad=True), "b": Tensor(np.zeros(1), requires_grad=True)})
    opt = Optimizer(p, lr=1.0, kind="sgd", clip=1.0)
    p["a"].grad, p["b"].grad = np.array([3.0]), np.array([4.0])
    opt.step()
    assert np.allclose([p["a"].data[0], p["b"].data[0]], [-0.6, -0.8])


def test_optimizer_state_round_trips():
    p = init_params(SPEC, 0)
    opt = Optimizer(p, lr=0.01)
    for t in p.tensors():
        t.grad = np.ones(t.shape)
    opt.step()
    other = Optimizer(init_params(SPEC, 0), lr=0.01)
    other.load_state_arrays(opt.state_arrays())
    assert other.step_count == 1
    for name, arr in opt.state_arrays().items():
        assert np.array_equal(other.state_arrays()[name], arr)


# -- EMA ------------------------------------------------------------------------


def test_ema_endpoints():
    online, target = init_params(SPEC, 0), init_params(SPEC, 1)
    frozen = {k: t.data.copy() for k, t in target.items()}
    ema_update(target, online, 0.0)
    for k, t in target.items():
        assert np.array_equal(t.data, frozen[k])
    ema_update(target, online, 1.0)
    for k, t in target.items():
        assert np.array_equal(t.data, online[k].data)


def test_ema_scalar_value():
    target, online = scalar_set(0.0), scalar_set(1.0)
    ema_update(target, online, 0.005)
    assert target["w"].data[0] == 0.005


def test_ema_is_exact_elementwise():
    online, target = init_params(SPEC, 0), init_params(SPEC, 1)
    expected = {k: 0.3 * online[k].data + 0.7 * t.data for k, t in target.items()}
    ema_update(target, online, 0.3)
    for k, t in target.items():
        assert np.array_equal(t.data, expected[k])


def test_ema_never_overshoots_online():
    rng = np.random.default_rng(0)
    target = ParamSet({"w": Tensor(rng.normal(size=50), requires_grad=True)})
    online = ParamSet({"w": Tensor(target["w"].data + rng.uniform(0, 2, size=50), requires_grad=True)})
    for tau in rng.uniform(0, 1, size=20):
        ema_update(target, online, float(tau))
        assert np.all(target["w"].data <= online["w"].data)


def test_ema_rejects_mismatched_sets_and_bad_tau():
    with pytest.raises(ValueError):
        ema_update(init_params(SPEC, 0), init_params(dense_spec("fc", 4, 3), 0), 0.1)
    with pytest.raises(ValueError):
        ema_update(init_params(SPEC, 0), init_params(SPEC, 1), 1.5)
