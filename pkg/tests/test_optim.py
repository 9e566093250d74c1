import numpy as np
import pytest

from seasoncast.nn import Adam, Parameter, step_lr


def _param(value):
    p = Parameter("w", np.array([value], dtype=np.float64))
    return p


class TestAdam:
    def test_first_step_closed_form(self):
        # w=1, g=1: bias-corrected m_hat = v_hat = 1, so the step is ~lr
        p = _param(1.0)
        opt = Adam([p], lr=1e-5)
        p.grad = np.array([1.0])
        opt.step()
        expected = 1.0 - 1e-5 * 1.0 / (1.0 + 1e-8)
        assert p.data[0] == pytest.approx(expected, rel=1e-12)

    def test_zero_gradient_is_fixed_point(self):
        p = _param(0.7)
        opt = Adam([p], lr=1e-3)
        p.grad = np.array([0.0])
        for _ in range(5):
            opt.step()
        assert p.data[0] == 0.7

    def test_weight_decay_shrinks_toward_zero(self):
        # g=0 but decay feeds wd*w into the moments: first step is
        # lr * (wd*w) / (|wd*w| + eps), i.e. almost exactly lr
        w0, lr, wd = 1.0, 1e-5, 1e-3
        p = _param(w0)
        opt = Adam([p], lr=lr, weight_decay=wd)
        p.grad = np.array([0.0])
        opt.step()
        g = wd * w0
        expected = w0 - lr * g / (np.sqrt(g * g) + 1e-8)
        assert p.data[0] == pytest.approx(expected, rel=1e-12)
        assert p.data[0] < w0

    def test_two_steps_closed_form(self):
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        p = _param(0.5)
        opt = Adam([p], lr=lr)
        w, m, v = 0.5, 0.0, 0.0
        for t in (1, 2):
            g = 2.0 * w  # gradient of w^2
            p.grad = np.array([2.0 * p.data[0]])
            opt.step()
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            assert p.data[0] == pytest.approx(w, rel=1e-12)

    def test_determinism(self, rng):
        shape = (4, 3)
        grads = [rng.normal(size=shape) for _ in range(10)]

        def run():
            p = Parameter("w", np.ones(shape))
            opt = Adam([p], lr=1e-3, weight_decay=1e-3)
            for g in grads:
                p.grad = g.copy()
                opt.step()
            return p.data

        assert np.array_equal(run(), run())


class TestStepLr:
    def test_exact_decay_schedule(self):
        base = 1e-5
        for e in range(35):
            assert step_lr(base, e, 10, 0.1) == base * 0.1 ** (e // 10)

    def test_factor_one_is_constant(self):
        assert step_lr(3e-4, 25, 10, 1.0) == 3e-4
