"""Ground-truth Garnet MDPs, exact Bellman solvers and environment sampling.

Arrays follow one layout throughout the package:

* transitions ``P[s, a, s']``
* rewards ``r[s, a]``
* policies ``pi[s, a]``
* values ``v[s]``

The array-level helpers (``policy_value``, ``bellman_apply``, ...) accept
arbitrary leading batch dimensions so the experiment runner can push all
replicas through a single call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError

DEFAULT_DISCOUNT = 0.99
SCHEMA_VERSION = 1


@dataclass(eq=False)
class TabularMdp:
    """A finite, continuing MDP with deterministic rewards."""

    transitions: np.ndarray
    rewards: np.ndarray
    discount: float = DEFAULT_DISCOUNT
    seed: int | None = field(default=None)

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        P, r = self.transitions, self.rewards
        if P.ndim != 3 or P.shape[0] != P.shape[2] or r.shape != P.shape[:2]:
            raise InvalidArgumentError(
                f"inconsistent shapes: transitions {P.shape}, rewards {r.shape}"
            )
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise InvalidArgumentError("an MDP needs at least one state and one action")
        if (P < 0).any() or not np.allclose(P.sum(-1), 1.0, rtol=0, atol=1e-12):
            raise InvalidArgumentError("every transitions[s, a] row must be a distribution")
        if not np.isfinite(r).all():
            raise InvalidArgumentError("rewards must be finite")
        if not 0.0 <= self.discount < 1.0:
            raise InvalidArgumentError(f"discount must lie in [0, 1), got {self.discount}")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    def with_discount(self, discount: float) -> "TabularMdp":
        return TabularMdp(self.transitions, self.rewards, discount, self.seed)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "tabular_mdp",
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "seed": self.seed,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMdp":
        if data.get("schema_version") != SCHEMA_VERSION or data.get("kind") != "tabular_mdp":
            raise InvalidArgumentError("not a tabular_mdp document of a supported version")
        mdp = cls(data["transitions"], data["rewards"], data["discount"], data.get("seed"))
        if (mdp.n_states, mdp.n_actions) != (data["n_states"], data["n_actions"]):
            raise InvalidArgumentError("declared sizes disagree with the stored arrays")
        return mdp

    def to_json(self) -> str:
        # json emits floats with repr(), the shortest string that round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


class TransitionSample(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int


def _as_generator(rng) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = int(rng)
    return np.random.default_rng(seed), seed


def generate_garnet(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator | int,
    discount: float = DEFAULT_DISCOUNT,
) -> TabularMdp:
    """Sample a Garnet MDP.

    Each ``(s, a)`` row starts as ``U(0, 1)`` noise; a successor count ``m``
    is drawn uniformly from ``{1, ..., n_states}`` and only the first ``m``
    entries of a random permutation keep their mass before renormalising.
    Rewards are i.i.d. standard normal. Passing an integer seed records it
    on the returned MDP.
    """
    if n_states < 1 or n_actions < 1:
        raise InvalidArgumentError(
            f"n_states and n_actions must be positive, got {n_states}, {n_actions}"
        )
    gen, seed = _as_generator(rng)
    shape = (n_states, n_actions, n_states)
    raw = gen.uniform(size=shape)
    n_successors = gen.integers(1, n_states + 1, size=(n_states, n_actions))
    order = gen.permuted(np.broadcast_to(np.arange(n_states), shape), axis=-1)
    raw = np.where(order < n_successors[..., None], raw, 0.0)
    transitions = raw / raw.sum(-1, keepdims=True)
    rewards = gen.standard_normal((n_states, n_actions))
    return TabularMdp(transitions, rewards, discount, seed)


def _check_policy(policy: np.ndarray, shape: tuple[int, ...]):
    if policy.shape[-2:] != shape:
        raise InvalidArgumentError(f"policy shape {policy.shape} does not match {shape}")


def policy_transitions(transitions: np.ndarray, policy: np.ndarray) -> np.ndarray:
    """State-to-state matrix ``P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)``."""
    return np.einsum("...sa,...sat->...st", policy, transitions)


def policy_rewards(rewards: np.ndarray, policy: np.ndarray) -> np.ndarray:
    return np.einsum("...sa,...sa->...s", policy, rewards)


def policy_value(
    transitions: np.ndarray, rewards: np.ndarray, policy: np.ndarray, discount: float
) -> np.ndarray:
    """Solve ``(I - discount * P_pi) v = r_pi`` by dense factorisation."""
    n = transitions.shape[-1]
    system = np.eye(n) - discount * policy_transitions(transitions, policy)
    return np.linalg.solve(system, policy_rewards(rewards, policy)[..., None])[..., 0]


def policy_value_exact(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    _check_policy(policy, mdp.rewards.shape)
    return policy_value(mdp.transitions, mdp.rewards, policy, mdp.discount)


def bellman_apply(
    transitions: np.ndarray,
    rewards: np.ndarray,
    policy: np.ndarray,
    v: np.ndarray,
    discount: float,
) -> np.ndarray:
    """``(T v)(s) = sum_a pi(a|s) [r(s, a) + discount * sum_s' P(s'|s, a) v(s')]``."""
    if (
        rewards.shape[-2:] != transitions.shape[-3:-1]
        or policy.shape[-2:] != rewards.shape[-2:]
        or v.shape[-1] != transitions.shape[-1]
    ):
        raise InvalidArgumentError("shape mismatch between model, policy and values")
    q = action_values(transitions, rewards, v, discount)
    return np.einsum("...sa,...sa->...s", policy, q)


def action_values(
    transitions: np.ndarray, rewards: np.ndarray, v: np.ndarray, discount: float
) -> np.ndarray:
    return rewards + discount * np.einsum("...sat,...t->...sa", transitions, v)


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Deterministic policy picking the lowest-index maximiser."""
    n_actions = q.shape[-1]
    return np.eye(n_actions)[np.argmax(q, axis=-1)]


def optimal_value(
    transitions: np.ndarray,
    rewards: np.ndarray,
    discount: float,
    tol: float = 1e-10,
    max_iters: int = 1000,
) -> np.ndarray:
    """Optimal values by Howard policy iteration (batched over leading axes)."""
    if tol <= 0:
        raise InvalidArgumentError("tol must be positive")
    policy = greedy_policy(rewards)
    residual = np.inf
    for _ in range(max_iters):
        v = policy_value(transitions, rewards, policy, discount)
        q = action_values(transitions, rewards, v, discount)
        residual = float(np.max(np.abs(q.max(-1) - v)))
        if residual <= tol:
            return v
        # switch action only on strict improvement so ties cannot cycle
        current = np.einsum("...sa,...sa->...s", policy, q)
        improve = q.max(-1) > current + tol * 1e-3
        policy = np.where(improve[..., None], greedy_policy(q), policy)
    raise ConvergenceError("policy iteration did not converge", residual)


def optimal_value_exact(
    mdp: TabularMdp, tol: float = 1e-10, max_iters: int = 1000
) -> np.ndarray:
    return optimal_value(mdp.transitions, mdp.rewards, mdp.discount, tol, max_iters)


def sample_next_states(transitions_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw from each row of ``transitions_rows`` given uniforms ``u``."""
    cdf = np.cumsum(transitions_rows, axis=-1)
    return np.sum(cdf <= (u * cdf[..., -1])[..., None], axis=-1)


def sample_transition(
    mdp: TabularMdp, state: int, action: int, rng: np.random.Generator
) -> TransitionSample:
    if not (0 <= state < mdp.n_states and 0 <= action < mdp.n_actions):
        raise InvalidArgumentError(f"(state, action) = ({state}, {action}) out of bounds")
    next_state = int(sample_next_states(mdp.transitions[state, action], rng.random()))
    return TransitionSample(state, action, float(mdp.rewards[state, action]), next_state)


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def epsilon_greedy_policy(q: np.ndarray, epsilon: float) -> np.ndarray:
    """Epsilon-greedy policy over ``q[..., s, a]``; ties split the greedy mass evenly."""
    q = np.asarray(q, dtype=float)
    if not np.isfinite(q).all():
        raise InvalidArgumentError("q must be finite")
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidArgumentError(f"epsilon must lie in [0, 1], got {epsilon}")
    n_actions = q.shape[-1]
    best = q == q.max(-1, keepdims=True)
    greedy = best / best.sum(-1, keepdims=True)
    return (1.0 - epsilon) * greedy + epsilon / n_actions
