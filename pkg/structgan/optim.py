from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .autograd import ShapeError, Tensor


@dataclass
class AdamState:
    """Moment buffers and step counter for one parameter set.

    Defaults are the GAN-style betas (beta1 = 0.5).
    """

    lr: float
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(
        cls, params: Mapping[str, Tensor], lr: float, beta1: float = 0.5, beta2: float = 0.999
    ) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2)
        for name, tensor in params.items():
            state.m[name] = np.zeros(tensor.shape)
            state.v[name] = np.zeros(tensor.shape)
        return state


def adam_step(
    params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState
) -> Dict[str, Tensor]:
    """One bias-corrected Adam update. Returns fresh leaf tensors; ``state`` is advanced."""
    for name, tensor in params.items():
        grad = grads.get(name)
        if grad is not None and np.shape(grad) != tensor.shape:
            raise ShapeError(f"adam_step: grad for {name} has shape {np.shape(grad)}, param {tensor.shape}")
        if name not in state.m or state.m[name].shape != tensor.shape:
            raise ShapeError(f"adam_step: optimizer state does not match parameter {name}")

    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    updated: Dict[str, Tensor] = {}
    for name, tensor in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros(tensor.shape)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        value = tensor.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        updated[name] = Tensor(value, requires_grad=tensor.requires_grad)
    return updated
