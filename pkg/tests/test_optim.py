import numpy as np
import pytest

from fsglab.optim import (
    OptimizerState,
    adam_step,
    momentum_expand,
    sgd_momentum_step,
    sgd_step,
)
from fsglab.rng import Rng


def test_sgd_zero_gradient_no_change():
    p = np.array([1.0, -2.0])
    sgd_step(p, np.zeros(2), lr=0.1)
    assert np.array_equal(p, [1.0, -2.0])


def test_momentum_zero_grad_zero_velocity():
    p = np.array([1.0, 2.0])
    state = OptimizerState()
    sgd_momentum_step(p, np.zeros(2), state, "p", lr=1.0, momentum=0.5)
    assert np.array_equal(p, [1.0, 2.0])


def test_momentum_hand_iterates():
    # v <- 0.5 v - 1.0 * g with g = 1 three times: v = -1, -1.5, -1.75
    state = OptimizerState()
    p = np.zeros(1)
    vs = []
    for _ in range(3):
        sgd_momentum_step(p, np.ones(1), state, "p", lr=1.0, momentum=0.5)
        vs.append(state.slots["p"]["velocity"][0])
    assert vs == [-1.0, -1.5, -1.75]


def test_adam_first_step_bias_corrected():
    p = np.zeros(1)
    state = OptimizerState()
    adam_step(p, np.ones(1), state, "p", lr=1e-3)
    # m_hat = 1, v_hat = 1 after bias correction: step = -lr / (1 + eps)
    assert abs(p[0] + 1e-3 / (1.0 + 1e-8)) < 1e-18


def test_adam_counts_are_per_parameter():
    state = OptimizerState()
    a = np.zeros(1)
    b = np.zeros(1)
    adam_step(a, np.ones(1), state, "a", lr=1e-3)
    adam_step(a, np.ones(1), state, "a", lr=1e-3)
    adam_step(b, np.ones(1), state, "b", lr=1e-3)
    assert state.counts == {"a": 2, "b": 1}


class TestMomentumExpand:
    def test_single_gradient(self):
        g = np.array([2.0, -1.0])
        assert np.array_equal(momentum_expand(0.9, 0.1, [g]), -0.1 * g)

    def test_beta_zero_is_memoryless(self):
        rng = Rng(1)
        grads = [rng.normals(3) for _ in range(5)]
        out = momentum_expand(0.0, 0.7, grads)
        assert np.allclose(out, -0.7 * grads[-1], atol=1e-15)

    def test_matches_iterated_recursion(self):
        rng = Rng(2)
        worst = 0.0
        for _ in range(100):
            beta = rng.uniform()
            alpha = 0.05 + rng.uniform()
            grads = [rng.normals(4) for _ in range(20)]
            v = np.zeros(4)
            for g in grads:
                v = beta * v - alpha * g
            closed = momentum_expand(beta, alpha, grads)
            worst = max(worst, float(np.max(np.abs(v - closed))))
        assert worst < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            momentum_expand(0.9, 0.1, [])
