"""Grounded value learning and value-error metrics."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import InvalidArgumentError
from .mdp import TransitionSample

DENOM_FLOOR = 0.01


def init_value(
    n_states: int,
    rng: np.random.Generator,
    value_noise_sigma: float | None = None,
    v_true: np.ndarray | None = None,
) -> np.ndarray:
    """Standard-normal values, or ``v_true`` plus noise of scale ``value_noise_sigma``."""
    if value_noise_sigma is not None:
        if v_true is None:
            raise InvalidArgumentError("value-noise initialisation needs v_true")
        if value_noise_sigma < 0:
            raise InvalidArgumentError("value_noise_sigma must be non-negative")
    noise = rng.standard_normal(n_states)
    if value_noise_sigma is None:
        return noise
    return np.asarray(v_true, dtype=float) + value_noise_sigma * noise


def td0_step(v, states, rewards, next_states, alpha, discount):
    bidx = tuple(np.indices(np.shape(states), sparse=True))
    target = rewards + discount * v[bidx + (next_states,)]
    idx = bidx + (states,)
    v[idx] = (1.0 - alpha) * v[idx] + alpha * target


def grounded_td0_update(
    v_hat: np.ndarray,
    batch: Iterable[TransitionSample],
    alpha_td: float,
    discount: float,
) -> np.ndarray:
    """Apply TD(0) for each sample in order and return the updated copy."""
    if not 0.0 < alpha_td <= 1.0:
        raise InvalidArgumentError(f"alpha_td must lie in (0, 1], got {alpha_td}")
    v = np.array(v_hat, dtype=float)
    for s in batch:
        td0_step(v, np.int64(s.state), s.reward, s.next_state, alpha_td, discount)
    return v


def relative_value_error(v_hat: np.ndarray, v_true: np.ndarray) -> float | np.ndarray:
    """Mean over states of ``|v - v_hat| / max(|v|, 0.01)`` (batched over leading axes)."""
    v_hat = np.asarray(v_hat, dtype=float)
    v_true = np.asarray(v_true, dtype=float)
    if v_hat.shape != v_true.shape:
        raise InvalidArgumentError(f"shape mismatch {v_hat.shape} vs {v_true.shape}")
    err = np.abs(v_true - v_hat) / np.maximum(np.abs(v_true), DENOM_FLOOR)
    out = err.mean(-1)
    return float(out) if out.ndim == 0 else out
