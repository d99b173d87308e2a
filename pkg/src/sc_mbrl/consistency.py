"""Self-consistency planning: expected model rollouts, losses and gradients.

For a start state ``s0`` the model and imagination policy ``mu`` induce state
distributions ``d_0 = onehot(s0)``, ``d_{k+1} = d_k P_mu`` and the expected
TD errors

    delta_k = r_bar_k + discount * V_bar_{k+1} - V_bar_k,

with ``r_bar_k = d_k . r_mu`` and ``V_bar_k = d_k . v``. The loss sums
``delta_k**2`` over start states and ``k = 0..K``. The variants share that
value and differ only in which terms are treated as constants when differentiating:

* ``RESIDUAL``: nothing is frozen.
* ``DIRECT``: the target ``r_bar_k + discount * V_bar_{k+1}`` is frozen.
* ``REVERSE``: the current estimate ``V_bar_k`` is frozen.
* ``DYNA``: as ``DIRECT`` but only the value table receives a gradient.

Gradients are obtained by a hand-written reverse pass through the rollout
recursion; every array may carry leading batch axes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .mdp import policy_rewards, policy_transitions, uniform_policy
from .model import ModelParams, softmax


class ScVariant(enum.Enum):
    RESIDUAL = "sc_residual"
    DIRECT = "sc_direct"
    REVERSE = "sc_reverse"
    DYNA = "dyna"


@dataclass
class RolloutDistributions:
    start_state: int
    horizon: int
    state_dists: list[np.ndarray]
    expected_rewards: list[float]
    expected_values: list[float]

    def td_errors(self, discount: float) -> np.ndarray:
        r = np.asarray(self.expected_rewards)
        v = np.asarray(self.expected_values)
        return r + discount * v[1:] - v[:-1]


@dataclass
class PlanningGradients:
    grad_logits: np.ndarray
    grad_reward: np.ndarray
    grad_value: np.ndarray

    def max_norm(self) -> float:
        return float(
            max(np.abs(g).max() for g in (self.grad_logits, self.grad_reward, self.grad_value))
        )


def _check_horizon(K: int):
    if K < 0:
        raise InvalidArgumentError(f"rollout horizon K must be non-negative, got {K}")


def rollout_distributions(
    params: ModelParams, mu: np.ndarray, start_state: int, K: int, v_hat: np.ndarray
) -> RolloutDistributions:
    _check_horizon(K)
    n = params.n_states
    if not 0 <= start_state < n:
        raise InvalidArgumentError(f"start state {start_state} out of bounds")
    p_mu = policy_transitions(params.transition_hat, mu)
    r_mu = policy_rewards(params.reward_hat, mu)
    d = np.zeros(n)
    d[start_state] = 1.0
    dists = [d]
    for _ in range(K + 1):
        dists.append(dists[-1] @ p_mu)
    return RolloutDistributions(
        start_state=start_state,
        horizon=K,
        state_dists=dists,
        expected_rewards=[float(d @ r_mu) for d in dists[:-1]],
        expected_values=[float(d @ v_hat) for d in dists],
    )


def start_distributions(starts, n_states: int) -> np.ndarray:
    """One-hot rows ``[..., n_starts, n_states]`` for integer start indices."""
    starts = np.asarray(starts)
    if starts.size == 0:
        raise InvalidArgumentError("at least one planning start state is required")
    if starts.min() < 0 or starts.max() >= n_states:
        raise InvalidArgumentError("planning start state out of bounds")
    return np.eye(n_states)[starts]


def _matvec(d, x):
    return np.einsum("...bs,...s->...b", d, x)


def planning_loss_and_grads(
    reward_hat: np.ndarray,
    logits: np.ndarray,
    v: np.ndarray,
    mu: np.ndarray,
    d0: np.ndarray,
    K: int,
    discount: float,
    variant: ScVariant,
    need_grads: bool = True,
    mean_over_starts: bool = False,
):
    """Loss and variant-aware gradients for start distributions ``d0[..., B, S]``.

    The loss sums squared expected TD errors over start states and steps, or
    averages over start states when ``mean_over_starts`` is set. Returns
    ``(loss, grad_logits, grad_reward, grad_value)``; the gradients are
    ``None`` when ``need_grads`` is false.
    """
    probs = softmax(logits)
    p_mu = policy_transitions(probs, mu)
    r_mu = policy_rewards(reward_hat, mu)
    dists = [d0]
    for _ in range(K + 1):
        dists.append(dists[-1] @ p_mu)
    r_bar = [_matvec(d, r_mu) for d in dists[:-1]]
    v_bar = [_matvec(d, v) for d in dists]
    deltas = [r_bar[k] + discount * v_bar[k + 1] - v_bar[k] for k in range(K + 1)]
    n_starts = d0.shape[-2] if mean_over_starts else 1
    loss = sum((delta**2).sum(-1) for delta in deltas) / n_starts
    if not need_grads:
        return loss, None, None, None

    through_target = variant in (ScVariant.RESIDUAL, ScVariant.REVERSE)
    through_estimate = variant in (ScVariant.RESIDUAL, ScVariant.DIRECT, ScVariant.DYNA)
    zero = np.zeros_like(deltas[0])
    grad_delta = [2.0 * delta / n_starts for delta in deltas]
    # adjoints of r_bar_k and V_bar_k
    adj_r = [g if through_target else zero for g in grad_delta] + [zero]
    adj_v = [zero] * (K + 2)
    for k, g in enumerate(grad_delta):
        if through_estimate:
            adj_v[k] = adj_v[k] - g
        if through_target:
            adj_v[k + 1] = adj_v[k + 1] + discount * g

    def vjp(d, adj):
        # d: [..., B, S], adj: [..., B] -> [..., S]
        return np.einsum("...bs,...b->...s", d, adj)

    grad_value = sum(vjp(d, a) for d, a in zip(dists, adj_v))
    if variant is ScVariant.DYNA:
        return loss, np.zeros_like(logits), np.zeros_like(reward_hat), grad_value

    grad_r_mu = sum(vjp(d, a) for d, a in zip(dists, adj_r))
    grad_p_mu = np.zeros_like(p_mu)
    adj_d = adj_r[K + 1][..., None] * r_mu[..., None, :] + adj_v[K + 1][..., None] * v[..., None, :]
    for k in range(K, -1, -1):
        grad_p_mu += np.swapaxes(dists[k], -1, -2) @ adj_d
        if k == 0:
            break
        adj_d = (
            adj_d @ np.swapaxes(p_mu, -1, -2)
            + adj_r[k][..., None] * r_mu[..., None, :]
            + adj_v[k][..., None] * v[..., None, :]
        )

    if variant is ScVariant.DIRECT:
        grad_reward = np.zeros_like(reward_hat)
    else:
        grad_reward = mu * grad_r_mu[..., None]
    grad_probs = mu[..., None] * grad_p_mu[..., :, None, :]
    grad_logits = probs * (grad_probs - (probs * grad_probs).sum(-1, keepdims=True))
    return loss, grad_logits, grad_reward, grad_value


def sc_loss(
    params: ModelParams,
    v_hat: np.ndarray,
    mu: np.ndarray,
    starts,
    K: int,
    variant: ScVariant,
    discount: float,
) -> float:
    _check_horizon(K)
    d0 = start_distributions(starts, params.n_states)
    loss, *_ = planning_loss_and_grads(
        params.reward_hat, params.logits, v_hat, mu, d0, K, discount, variant, need_grads=False
    )
    return float(loss)


def sc_gradients(
    params: ModelParams,
    v_hat: np.ndarray,
    mu: np.ndarray,
    starts,
    K: int,
    variant: ScVariant,
    discount: float,
) -> PlanningGradients:
    """Gradients of the self-consistency loss under ``variant``'s stop-gradients."""
    _check_horizon(K)
    d0 = start_distributions(starts, params.n_states)
    _, g_logits, g_reward, g_value = planning_loss_and_grads(
        params.reward_hat, params.logits, v_hat, mu, d0, K, discount, variant
    )
    return PlanningGradients(g_logits, g_reward, g_value)


def apply_planning_update(
    params: ModelParams,
    v_hat: np.ndarray,
    grads: PlanningGradients,
    alpha_plan: float,
    alpha_value: float | None = None,
) -> tuple[ModelParams, np.ndarray]:
    """One descent step; ``alpha_value`` defaults to ``alpha_plan``."""
    if alpha_plan <= 0:
        raise InvalidArgumentError("alpha_plan must be positive")
    alpha_value = alpha_plan if alpha_value is None else alpha_value
    new = ModelParams(
        params.reward_hat - alpha_plan * grads.grad_reward,
        params.logits - alpha_plan * grads.grad_logits,
    )
    return new, v_hat - alpha_value * grads.grad_value


def imagination_policy(base: np.ndarray, epsilon: float | None = None) -> np.ndarray:
    """``base`` itself (on-policy), or ``base`` mixed with uniform at rate ``epsilon``."""
    if epsilon is None:
        return base
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidArgumentError(f"epsilon must lie in [0, 1], got {epsilon}")
    uniform = uniform_policy(*base.shape[-2:])
    return (1.0 - epsilon) * base + epsilon * uniform


def select_planning_starts(
    n_states: int, n_samples: int | None = None, rng: np.random.Generator | None = None
) -> np.ndarray:
    """All states in order, or ``n_samples`` uniform draws with replacement."""
    if n_samples is None:
        return np.arange(n_states)
    if n_samples < 1:
        raise InvalidArgumentError("sampled planning starts need n >= 1")
    if rng is None:
        raise InvalidArgumentError("sampled planning starts need a random generator")
    return rng.integers(0, n_states, size=n_samples)
