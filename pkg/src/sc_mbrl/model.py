"""Learned tabular model: reward table plus softmax transition logits."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InvalidArgumentError
from .mdp import SCHEMA_VERSION, TabularMdp, TransitionSample, action_values


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(-1, keepdims=True)


@dataclass(eq=False)
class ModelParams:
    """``reward_hat[s, a]`` and pre-softmax ``logits[s, a, s']``."""

    reward_hat: np.ndarray
    logits: np.ndarray

    @property
    def transition_hat(self) -> np.ndarray:
        return softmax(self.logits)

    @property
    def n_states(self) -> int:
        return self.logits.shape[-1]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[-2]

    def copy(self) -> "ModelParams":
        return ModelParams(self.reward_hat.copy(), self.logits.copy())

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "model_params",
            "reward_hat": self.reward_hat.tolist(),
            "logits": self.logits.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        if data.get("schema_version") != SCHEMA_VERSION or data.get("kind") != "model_params":
            raise InvalidArgumentError("not a model_params document of a supported version")
        return cls(np.asarray(data["reward_hat"], float), np.asarray(data["logits"], float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


def encode_transitions(transitions: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Logits whose softmax approximates ``transitions`` (zeros become ``floor``)."""
    return np.log(transitions + floor)


def init_model(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    reward_noise_sigma: float | None = None,
    mdp: TabularMdp | None = None,
) -> ModelParams:
    """Draw initial model parameters.

    Logits are the log of a flat Dirichlet draw per ``(s, a)``. Rewards are
    standard normal by default; with ``reward_noise_sigma`` set they are the
    true rewards of ``mdp`` plus Gaussian noise of that scale. Both modes
    consume the same random numbers, so a seed yields paired initialisations.
    """
    if n_states < 1 or n_actions < 1:
        raise InvalidArgumentError("model shapes must be positive")
    if reward_noise_sigma is not None:
        if mdp is None:
            raise InvalidArgumentError("reward-noise initialisation needs the true MDP")
        if reward_noise_sigma < 0:
            raise InvalidArgumentError("reward_noise_sigma must be non-negative")
    logits = np.log(rng.dirichlet(np.ones(n_states), size=(n_states, n_actions)))
    noise = rng.standard_normal((n_states, n_actions))
    if reward_noise_sigma is None:
        reward_hat = noise
    else:
        reward_hat = mdp.rewards + reward_noise_sigma * noise
    return ModelParams(reward_hat, logits)


# Per-sample kernels. Each takes one column of samples per leading batch
# index (``states`` etc. have the batch shape) and mutates in place.


def _batch_index(states: np.ndarray) -> tuple:
    return tuple(np.indices(np.shape(states), sparse=True))


def reward_step(reward_hat, states, actions, rewards, alpha_r):
    idx = _batch_index(states) + (states, actions)
    reward_hat[idx] += alpha_r * (rewards - reward_hat[idx])


def mle_step(logits, states, actions, next_states, alpha):
    idx = _batch_index(states) + (states, actions)
    row = logits[idx]
    onehot = np.eye(row.shape[-1])[next_states]
    logits[idx] = row + alpha * (onehot - softmax(row))


def ve_loss_and_grad(logits_s, policy_s, v, next_state_value):
    """Per-sample value-equivalence loss and its gradient w.r.t. ``logits[s]``.

    ``logits_s`` is ``[..., a, s']`` for the sampled state, ``policy_s`` is
    ``pi[..., a]`` at that state, ``v`` the value table.
    """
    probs = softmax(logits_s)
    next_values = np.einsum("...at,...t->...a", probs, v)
    err = np.einsum("...a,...a->...", policy_s, next_values) - next_state_value
    grad = (2.0 * err)[..., None, None] * policy_s[..., None] * probs * (
        v[..., None, :] - next_values[..., None]
    )
    return err**2, grad


def ve_step(logits, policy, v, states, next_states, alpha):
    bidx = _batch_index(states)
    idx = bidx + (states,)
    next_value = v[bidx + (next_states,)]
    _, grad = ve_loss_and_grad(logits[idx], policy[idx], v, next_value)
    logits[idx] -= alpha * grad


def grounded_reward_update(
    params: ModelParams, batch: Iterable[TransitionSample], alpha_r: float
) -> ModelParams:
    """Move ``reward_hat[s, a]`` towards each observed reward, in batch order."""
    out = params.copy()
    for sample in batch:
        reward_step(out.reward_hat, np.int64(sample.state), sample.action, sample.reward, alpha_r)
    return out


def mle_model_update(
    params: ModelParams, batch: Iterable[TransitionSample], alpha_mle: float
) -> ModelParams:
    """Sequential gradient ascent on ``log P_hat(s'|s, a)`` for each sample."""
    if alpha_mle <= 0:
        raise InvalidArgumentError("alpha_mle must be positive")
    out = params.copy()
    for sample in batch:
        mle_step(out.logits, np.int64(sample.state), sample.action, sample.next_state, alpha_mle)
    return out


def ve_model_update(
    params: ModelParams,
    batch: Iterable[TransitionSample],
    v_hat: np.ndarray,
    policy: np.ndarray,
    alpha_ve: float,
) -> ModelParams:
    """Sequential gradient descent on the value-equivalence loss.

    For a sample ``(s, a, r, s')`` the loss is
    ``(sum_{a', x} pi(a'|s) P_hat(x|s, a') v_hat(x) - v_hat(s'))**2``; the
    sum runs over all actions at ``s`` so every action's logits can move.
    ``v_hat`` is treated as a constant.
    """
    if alpha_ve <= 0:
        raise InvalidArgumentError("alpha_ve must be positive")
    out = params.copy()
    for sample in batch:
        ve_step(out.logits, policy, v_hat, np.int64(sample.state), sample.next_state, alpha_ve)
    return out


def model_q_values(params: ModelParams, v_hat: np.ndarray, discount: float) -> np.ndarray:
    return action_values(params.transition_hat, params.reward_hat, v_hat, discount)


def model_diagnostics(params: ModelParams, mdp: TabularMdp) -> dict[str, float]:
    if params.logits.shape != mdp.transitions.shape:
        raise InvalidArgumentError("model and MDP shapes differ")
    tv, reward_err = diagnostics_arrays(params.logits, params.reward_hat, mdp.transitions, mdp.rewards)
    return {"max_tv_distance": float(tv), "max_reward_error": float(reward_err)}


def diagnostics_arrays(logits, reward_hat, transitions, rewards):
    """Batched max total-variation distance and max reward error."""
    tv = 0.5 * np.abs(softmax(logits) - transitions).sum(-1)
    return tv.max(axis=(-2, -1)), np.abs(reward_hat - rewards).max(axis=(-2, -1))
