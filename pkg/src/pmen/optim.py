"""Adam optimizer over a flat dict of named parameter arrays."""

import numpy as np

from .errors import OptimError


class AdamState:
    """First/second moment accumulators plus step counter for one model.

    The accumulator dicts mirror the parameter dict exactly (same keys,
    same shapes). ``lr`` may be reassigned between steps; the paper-style
    schedule does exactly that at the decay epoch.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if not 0.0 < beta1 < 1.0 or not 0.0 < beta2 < 1.0:
            raise OptimError(f"moment decay rates must lie in (0, 1), got {beta1}, {beta2}")
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns the new parameter dict.

    ``state`` is advanced in place (t, m, v). Raises when any gradient is
    missing, has the wrong shape, or contains non-finite values.
    """
    for name, p in params.items():
        if name not in grads:
            raise OptimError(f"missing gradient for parameter '{name}'")
        g = grads[name]
        if g.shape != p.shape:
            raise OptimError(
                f"gradient shape {g.shape} does not match parameter '{name}' shape {p.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise OptimError(f"non-finite gradient for parameter '{name}'")

    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    out: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        out[name] = (p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(
            p.dtype, copy=False
        )
    return out
