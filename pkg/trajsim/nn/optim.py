"""Parameter update rules for a :class:`ParamStore`."""

from typing import Dict, Tuple

import numpy as np

from trajsim.errors import ConfigError, NumericError
from trajsim.nn.params import ParamStore


def _gradient(store: ParamStore, name: str) -> np.ndarray:
    grad = store.grads.get(name)
    if grad is None:
        raise NumericError(f"Missing gradient for parameter {name!r}; call backward() first")
    if grad.shape != store[name].shape:
        raise NumericError(f"Gradient for {name!r} has shape {grad.shape}, expected {store[name].shape}")
    return grad


def sgd_step(store: ParamStore, lr: float) -> None:
    for name, tensor in store.items():
        tensor.data = tensor.data - lr * _gradient(store, name)


class Adam:
    """Adam with bias-corrected moments.

    State is keyed by parameter name, so one optimizer belongs to one store.
    """

    def __init__(self, lr: float = 0.001, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError(f"Learning rate must be positive, got {lr}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, store: ParamStore) -> None:
        """Apply one update to every parameter, or to none if any result is non-finite."""
        grads = {name: _gradient(store, name) for name in store}
        beta1, beta2 = self.betas
        t = self.t + 1
        staged = {}
        for name, tensor in store.items():
            g = grads[name]
            m = beta1 * self.m.get(name, np.zeros_like(g)) + (1.0 - beta1) * g
            v = beta2 * self.v.get(name, np.zeros_like(g)) + (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            data = tensor.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.all(np.isfinite(data)):
                raise NumericError(f"Adam update produced non-finite values in {name!r}")
            staged[name] = (m, v, data)
        self.t = t
        for name, tensor in store.items():
            self.m[name], self.v[name], tensor.data = staged[name]
