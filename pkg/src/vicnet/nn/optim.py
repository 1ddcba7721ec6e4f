"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import ParamStore


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7) -> None:
    """In-place Adam update of the trainable entries of ``params``.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps), with m_hat and v_hat
    the bias-corrected first and second moment estimates. Parameters that
    are not trainable are never written, whatever ``grads`` contains.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for key, g in grads.items():
        if not params.trainable.get(key, False):
            continue
        theta = params.values[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(theta)
            state.v[key] = np.zeros_like(theta)
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        theta -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(theta.dtype)
