"""Adam optimizer over a flat parameter vector.

Standard bias-corrected update: m and v track exponentially decayed first
and second gradient moments, and the step is lr * m_hat / (sqrt(v_hat) +
eps). Defaults are the usual lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8.
For inverse problems the vector simply carries the extra equation
parameter as its last entry.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n_params: int, lr: float = 1e-3, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params),
                   lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One in-place update. Deterministic; rejects non-finite gradients."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(
            f"length mismatch: params {params.shape}, grads {grads.shape}, "
            f"state {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        bad = int(np.argmin(np.isfinite(grads)))
        raise ValueError(f"non-finite gradient at index {bad}: {grads[bad]}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    with np.errstate(all="ignore"):
        state.m *= b1
        state.m += (1.0 - b1) * grads
        state.v *= b2
        state.v += (1.0 - b2) * grads * grads
        m_hat = state.m / (1.0 - b1 ** state.t)
        v_hat = state.v / (1.0 - b2 ** state.t)
        params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
