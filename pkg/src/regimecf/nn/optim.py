"""Adam optimizer over named parameter tensors.

Hyperparameters follow the package defaults (lr 1e-3, betas (0.95, 0.9999));
steps are rejected with NumericError when any gradient is non-finite, so a
diverging run fails loudly instead of silently corrupting moments.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from .tensor import Tensor


class Adam:
    def __init__(self, params: dict, lr=1e-3, betas=(0.95, 0.9999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        """One bias-corrected update using the stored .grad fields."""
        grads = {}
        for name, t in self.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for {name!r}; "
                                   "step rejected")
            grads[name] = g
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for name in sorted(self.params):
            t = self.params[name]
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        return {
            "lr": self.lr, "betas": [self.beta1, self.beta2],
            "eps": self.eps, "step_count": self.step_count,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.lr = state["lr"]
        self.beta1, self.beta2 = state["betas"]
        self.eps = state["eps"]
        self.step_count = state["step_count"]
        for k in self.m:
            self.m[k] = np.array(state["m"][k], dtype=float).reshape(
                self.m[k].shape)
            self.v[k] = np.array(state["v"][k], dtype=float).reshape(
                self.v[k].shape)


def adam_step(params: dict, grads: dict, state: Adam):
    """Functional wrapper: assign grads, delegate to the stateful step."""
    for name, t in params.items():
        t.grad = np.asarray(grads[name], dtype=float)
    state.step()
    return params, state
