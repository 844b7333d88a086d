from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np

from autodiff import Parameter
from helpers.errors import DimensionError
from helpers.settings import TrainConfig


@dataclass
class AdamState:
    """First and second moments per parameter name, plus the shared step counter"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Iterable[Parameter], grads: Dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> AdamState:
    """
    One bias-corrected Adam update, applied in place to the parameters.
    Parameters whose gradient is identically zero are skipped.

    Args:
        params (Iterable[Parameter]): Parameters to update
        grads (Dict[str, np.ndarray]): Gradient per parameter name
        state (AdamState): Moments and step counter, updated in place
        cfg (TrainConfig): lr, beta1, beta2, eps

    Returns:
        The updated state
    """
    state.t += 1
    bias1 = 1.0 - cfg.beta1 ** state.t
    bias2 = 1.0 - cfg.beta2 ** state.t

    for param in params:
        g = grads[param.name]
        if g.shape != param.shape:
            raise DimensionError(f"gradient for {param.name} has shape {g.shape}, expected {param.shape}")
        # Identically zero gradient: parameter and its moments stay as they are
        if not g.any():
            continue
        if param.name not in state.m:
            state.m[param.name] = np.zeros_like(param.data)
            state.v[param.name] = np.zeros_like(param.data)

        m = cfg.beta1 * state.m[param.name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[param.name] + (1.0 - cfg.beta2) * (g * g)
        state.m[param.name] = m
        state.v[param.name] = v

        m_hat = m / bias1
        v_hat = v / bias2
        updated = param.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        updated.setflags(write=False)
        param.data = updated

    return state
