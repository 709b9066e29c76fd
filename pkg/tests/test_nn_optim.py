import numpy as np
import pytest

from regimecf.errors import NumericError
from regimecf.nn import Adam, Tensor, adam_step


class TestAdam:
    def test_zero_grads_leave_params_unchanged(self):
        w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam({"w": w})
        w.grad = np.zeros(2)
        before = w.data.copy()
        for _ in range(5):
            opt.step()
        np.testing.assert_array_equal(w.data, before)

    def test_quadratic_descent_monotone(self):
        w = Tensor(np.array(1.0), requires_grad=True)
        opt = Adam({"w": w}, lr=1e-3, betas=(0.95, 0.9999))
        values = [abs(float(w.data))]
        for _ in range(100):
            opt.zero_grad()
            loss = w * w
            loss.backward()
            opt.step()
            values.append(abs(float(w.data)))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_identical_inputs_identical_outputs(self):
        def run():
            w = Tensor(np.array([0.3, -0.7]), requires_grad=True)
            opt = Adam({"w": w})
            for _ in range(10):
                opt.zero_grad()
                (w * w).sum().backward()
                opt.step()
            return w.data.copy(), opt.m["w"].copy(), opt.v["w"].copy()

        r1, m1, v1 = run()
        r2, m2, v2 = run()
        np.testing.assert_array_equal(r1, r2)
        np.testing.assert_array_equal(m1, m2)
        np.testing.assert_array_equal(v1, v2)

    def test_nonfinite_grad_rejected(self):
        w = Tensor(np.array(1.0), requires_grad=True)
        opt = Adam({"w": w})
        w.grad = np.array(np.nan)
        before = float(w.data)
        with pytest.raises(NumericError):
            opt.step()
        assert float(w.data) == before
        assert opt.step_count == 0

    def test_bias_correction_first_step(self):
        # with constant grad g, the first update is exactly -lr * sign(g)
        w = Tensor(np.array(0.0), requires_grad=True)
        opt = Adam({"w": w}, lr=1e-3, eps=0.0)
        w.grad = np.array(2.5)
        opt.step()
        assert float(w.data) == pytest.approx(-1e-3)

    def test_functional_wrapper(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        state = Adam({"w": w})
        params, state = adam_step({"w": w}, {"w": np.array([1.0])}, state)
        assert state.step_count == 1
        assert params["w"] is w

    def test_state_dict_round_trip(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam({"w": w})
        w.grad = np.array([0.1, -0.2])
        opt.step()
        blob = opt.state_dict()
        w2 = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt2 = Adam({"w": w2})
        opt2.load_state_dict(blob)
        assert opt2.step_count == 1
        np.testing.assert_array_equal(opt2.m["w"], opt.m["w"])
        np.testing.assert_array_equal(opt2.v["w"], opt.v["w"])

    def test_moments_decay_without_gradient(self):
        w = Tensor(np.array(1.0), requires_grad=True)
        opt = Adam({"w": w})
        w.grad = np.array(1.0)
        opt.step()
        m_before = float(opt.m["w"])
        w.grad = np.array(0.0)
        opt.step()
        assert abs(float(opt.m["w"])) < abs(m_before)
