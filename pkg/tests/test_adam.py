import numpy as np
import pytest

from vseg.autodiff import Tensor
from vseg.optim import AdamState, adam_step, zero_grads


def make_param(value, grad):
    p = Tensor(np.array(value), requires_grad=True)
    p.grad = np.array(grad)
    return p


def test_first_step_size_close_to_lr():
    lr = 1e-4
    p = make_param([0.0], [1.0])
    adam_step({"p": p}, AdamState(lr=lr))
    # bias correction makes the first step -lr * g/(|g| + small)
    assert p.data[0] < 0
    assert 0.9 * lr <= abs(p.data[0]) <= lr


def test_zero_gradient_leaves_params_unchanged():
    p = make_param([1.5, -2.0], [0.0, 0.0])
    state = AdamState()
    for _ in range(5):
        p.grad = np.zeros(2)
        adam_step({"p": p}, state)
    assert np.array_equal(p.data, [1.5, -2.0])


def test_missing_grad_lists_parameter():
    p = make_param([0.0], [1.0])
    q = Tensor(np.array([0.0]), requires_grad=True)
    with pytest.raises(ValueError, match="q"):
        adam_step({"p": p, "q": q}, AdamState())


def test_step_counter_increments_by_one():
    p = make_param([0.0], [1.0])
    state = AdamState()
    for expected in (1, 2, 3):
        p.grad = np.array([1.0])
        adam_step({"p": p}, state)
        assert state.step == expected


def test_deterministic_across_runs(rng):
    def run():
        local = np.random.default_rng(7)
        p = Tensor(local.normal(size=4), requires_grad=True)
        state = AdamState(lr=1e-3)
        for _ in range(10):
            p.grad = local.normal(size=4)
            adam_step({"p": p}, state)
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_matches_reference_formula(rng):
    # one step against the textbook update computed by hand
    g = rng.normal(size=3)
    p = make_param(np.zeros(3), g)
    state = AdamState(lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8)
    adam_step({"p": p}, state)
    m_hat = (0.1 * g) / (1 - 0.9)
    v_hat = (0.001 * g * g) / (1 - 0.999)
    expected = -0.01 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.allclose(p.data, expected, rtol=1e-12)


def test_zero_grads_clears():
    p = make_param([0.0], [1.0])
    zero_grads({"p": p})
    assert p.grad is None
