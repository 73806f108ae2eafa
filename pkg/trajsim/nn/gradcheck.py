"""Central finite-difference checks against the recorded-graph gradients."""

from typing import Callable, Dict

import numpy as np

from trajsim.nn.params import ParamStore
from trajsim.nn.tensor import Tensor

LossFn = Callable[[ParamStore], Tensor]


def numerical_gradient(fn: LossFn, store: ParamStore, name: str, eps: float = 1e-5) -> np.ndarray:
    """d(fn)/d(store[name]) by central differences; the parameter is restored afterwards."""
    tensor = store[name]
    original = tensor.data.copy()
    grad = np.zeros_like(original)
    flat = grad.reshape(-1)
    for idx in range(original.size):
        bumped = original.copy().reshape(-1)
        bumped[idx] += eps
        tensor.data = bumped.reshape(original.shape)
        plus = fn(store).item()
        bumped[idx] -= 2 * eps
        tensor.data = bumped.reshape(original.shape)
        minus = fn(store).item()
        flat[idx] = (plus - minus) / (2 * eps)
    tensor.data = original
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = float(np.linalg.norm(analytic - numeric))
    return num / max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), 1e-12)


def check_gradients(fn: LossFn, store: ParamStore, eps: float = 1e-5) -> Dict[str, float]:
    """Relative error between backward() and finite differences, per parameter tensor."""
    analytic = {name: g.copy() for name, g in store.backward(fn(store)).items()}
    return {
        name: relative_error(analytic[name], numerical_gradient(fn, store, name, eps))
        for name in store
    }
