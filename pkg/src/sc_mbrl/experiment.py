"""Alternating grounded / planning experiments on Garnet MDPs.

All replicas of a run advance in lockstep as one batch of arrays with a
leading replica axis. Randomness is never shared: replica ``i`` draws its
MDP, initialisation and experience from streams spawned off
``SeedSequence(base_seed, spawn_key=(i,))``, so any subset of replicas
reproduces in isolation.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import consistency, mdp as mdp_lib, model as model_lib, value as value_lib
from .consistency import ScVariant
from .errors import InvalidArgumentError, NumericalError

log = logging.getLogger(__name__)


class Task(enum.Enum):
    EVALUATION = "evaluation"
    CONTROL = "control"


class Algorithm(enum.Enum):
    MODEL_FREE = "model_free"
    DYNA = "dyna"
    SC_RESIDUAL = "sc_residual"
    SC_DIRECT = "sc_direct"
    SC_REVERSE = "sc_reverse"

    @property
    def variant(self) -> ScVariant | None:
        return None if self is Algorithm.MODEL_FREE else ScVariant(self.value)


class ModelObjective(enum.Enum):
    MLE = "mle"
    VE = "ve"


class Collection(enum.Enum):
    STREAMS = "streams"
    IID = "iid"


class InitTarget(enum.Enum):
    REWARD = "reward"
    VALUE = "value"


MODEL_RATES = {ModelObjective.MLE: 1.0, ModelObjective.VE: 3.0}
SC_RATES = {ModelObjective.MLE: 10.0, ModelObjective.VE: 0.3}


@dataclass(frozen=True)
class ExperimentConfig:
    task: Task = Task.EVALUATION
    algorithm: Algorithm = Algorithm.SC_DIRECT
    model_objective: ModelObjective = ModelObjective.MLE
    n_states: int = 20
    n_actions: int = 4
    discount: float = 0.99
    epsilon: float | None = None
    batch_size: int = 8
    K: int = 2
    iterations: int = 2000
    eval_interval: int = 1
    n_replicas: int = 30
    base_seed: int = 0
    alpha_td: float = 0.03
    alpha_r: float = 1.0
    alpha_model: float | None = None
    alpha_plan: float | None = None
    alpha_plan_value: float | None = None
    planning_starts: int | None = None
    imagination_epsilon: float | None = None
    collection: Collection = Collection.STREAMS
    reward_noise_sigma: float | None = None
    value_noise_sigma: float | None = None
    greedy_eval: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        def require(ok, key, msg):
            if not ok:
                raise InvalidArgumentError(f"{key}: {msg}")

        require(self.n_states >= 1, "n_states", "must be >= 1")
        require(self.n_actions >= 1, "n_actions", "must be >= 1")
        require(0.0 <= self.discount < 1.0, "discount", "must lie in [0, 1)")
        require(self.batch_size >= 1, "batch_size", "must be >= 1")
        require(self.K >= 0, "K", "must be >= 0")
        require(self.iterations >= 0, "iterations", "must be >= 0")
        require(self.eval_interval >= 1, "eval_interval", "must be >= 1")
        require(self.n_replicas >= 1, "n_replicas", "must be >= 1")
        require(0.0 < self.alpha_td <= 1.0, "alpha_td", "must lie in (0, 1]")
        require(0.0 < self.alpha_r <= 1.0, "alpha_r", "must lie in (0, 1]")
        for key in ("alpha_model", "alpha_plan", "alpha_plan_value"):
            rate = getattr(self, key)
            require(rate is None or rate > 0, key, "must be positive")
        require(
            self.planning_starts is None or self.planning_starts >= 1,
            "planning_starts", "must be >= 1",
        )
        require(
            self.imagination_epsilon is None or 0.0 <= self.imagination_epsilon <= 1.0,
            "imagination_epsilon", "must lie in [0, 1]",
        )
        if self.task is Task.EVALUATION:
            require(self.epsilon is None, "epsilon", "is only meaningful for control")
        else:
            require(
                self.epsilon is not None and 0.0 <= self.epsilon <= 1.0,
                "epsilon", "control needs epsilon in [0, 1]",
            )
        for key in ("reward_noise_sigma", "value_noise_sigma"):
            sigma = getattr(self, key)
            require(sigma is None or sigma >= 0, key, "must be non-negative")
        require(
            self.value_noise_sigma is None or self.task is Task.EVALUATION,
            "value_noise_sigma", "value-noise initialisation needs the evaluation task",
        )

    @property
    def model_rate(self) -> float:
        if self.alpha_model is not None:
            return self.alpha_model
        return MODEL_RATES[self.model_objective]

    @property
    def plan_rate(self) -> float:
        if self.alpha_plan is not None:
            return self.alpha_plan
        if self.algorithm is Algorithm.DYNA:
            return self.alpha_td
        return SC_RATES[self.model_objective]

    @property
    def plan_value_rate(self) -> float:
        return self.plan_rate if self.alpha_plan_value is None else self.alpha_plan_value

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            out[f.name] = val.value if isinstance(val, enum.Enum) else val
        out["resolved_alpha_model"] = self.model_rate
        out["resolved_alpha_plan"] = self.plan_rate
        out["resolved_alpha_plan_value"] = self.plan_value_rate
        return out


@dataclass(frozen=True)
class MetricRecord:
    replica: int
    iteration: int
    value_error: float | None
    normalized_return: float | None
    sc_loss: float
    model_tv: float
    model_reward_err: float

    FIELDS = (
        "replica", "iteration", "value_error", "normalized_return",
        "sc_loss", "model_tv", "model_reward_err",
    )

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}


@dataclass(frozen=True)
class SummaryStat:
    key: float
    mean: float
    ci_lo: float
    ci_hi: float


def replica_seed_sequence(base_seed: int, replica: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(base_seed, spawn_key=(replica,))


@dataclass
class ReplicaStreams:
    mdp: np.random.Generator
    init: np.random.Generator
    experience: np.random.Generator

    @classmethod
    def for_replica(cls, base_seed: int, replica: int) -> "ReplicaStreams":
        children = replica_seed_sequence(base_seed, replica).spawn(3)
        return cls(*(np.random.default_rng(c) for c in children))


class _Batch:
    """State of every replica of one run, stacked along axis 0."""

    def __init__(self, config: ExperimentConfig, replicas: Sequence[int], mdps=None):
        c = config
        self.config = c
        self.replicas = list(replicas)
        streams = [ReplicaStreams.for_replica(c.base_seed, i) for i in self.replicas]
        self.rngs = [s.experience for s in streams]
        if mdps is None:
            mdps = [
                mdp_lib.generate_garnet(c.n_states, c.n_actions, s.mdp, c.discount)
                for s in streams
            ]
        else:
            mdps = [m.with_discount(c.discount) for m in mdps]
        self.mdps = mdps
        self.P = np.stack([m.transitions for m in mdps])
        self.r = np.stack([m.rewards for m in mdps])

        uniform = mdp_lib.uniform_policy(c.n_states, c.n_actions)
        if c.task is Task.EVALUATION:
            self.v_pi = mdp_lib.policy_value(self.P, self.r, uniform, c.discount)
        else:
            self.v_star = mdp_lib.optimal_value(self.P, self.r, c.discount)

        models, values = [], []
        for k, s in enumerate(streams):
            models.append(
                model_lib.init_model(
                    c.n_states, c.n_actions, s.init, c.reward_noise_sigma, mdps[k]
                )
            )
            values.append(
                value_lib.init_value(
                    c.n_states, s.init, c.value_noise_sigma,
                    None if c.value_noise_sigma is None else self.v_pi[k],
                )
            )
        self.reward_hat = np.stack([m.reward_hat for m in models])
        self.logits = np.stack([m.logits for m in models])
        self.v = np.stack(values)
        self.stream_states = np.stack(
            [g.integers(0, c.n_states, size=c.batch_size) for g in self.rngs]
        )
        self.iteration = 0
        self._all_starts = np.broadcast_to(
            np.eye(c.n_states), (len(self.replicas), c.n_states, c.n_states)
        )

    def behaviour_policy(self) -> np.ndarray:
        c = self.config
        if c.task is Task.EVALUATION:
            shape = (len(self.replicas), c.n_states, c.n_actions)
            return np.broadcast_to(mdp_lib.uniform_policy(c.n_states, c.n_actions), shape)
        q = mdp_lib.action_values(model_lib.softmax(self.logits), self.reward_hat, self.v, c.discount)
        return mdp_lib.epsilon_greedy_policy(q, c.epsilon)

    def collect(self, policy):
        c = self.config
        u = np.stack([g.random((c.batch_size, 3)) for g in self.rngs])
        rows = np.arange(len(self.replicas))[:, None]
        if c.collection is Collection.STREAMS:
            states = self.stream_states
        else:
            states = np.minimum((u[..., 0] * c.n_states).astype(int), c.n_states - 1)
        actions = mdp_lib.sample_next_states(policy[rows, states], u[..., 1])
        next_states = mdp_lib.sample_next_states(self.P[rows, states, actions], u[..., 2])
        rewards = self.r[rows, states, actions]
        if c.collection is Collection.STREAMS:
            self.stream_states = next_states
        return states, actions, rewards, next_states

    def planning_starts(self):
        c = self.config
        if c.planning_starts is None:
            return self._all_starts
        starts = np.stack([
            consistency.select_planning_starts(c.n_states, c.planning_starts, g)
            for g in self.rngs
        ])
        return np.eye(c.n_states)[starts]

    def step(self):
        c = self.config
        self.iteration += 1
        policy = self.behaviour_policy()
        states, actions, rewards, next_states = self.collect(policy)
        columns = range(c.batch_size)
        for j in columns:
            model_lib.reward_step(self.reward_hat, states[:, j], actions[:, j], rewards[:, j], c.alpha_r)
        for j in columns:
            value_lib.td0_step(self.v, states[:, j], rewards[:, j], next_states[:, j], c.alpha_td, c.discount)
        if c.model_objective is ModelObjective.MLE:
            for j in columns:
                model_lib.mle_step(self.logits, states[:, j], actions[:, j], next_states[:, j], c.model_rate)
        else:
            for j in columns:
                model_lib.ve_step(self.logits, policy, self.v, states[:, j], next_states[:, j], c.model_rate)

        variant = c.algorithm.variant
        if variant is None:
            return
        mu = consistency.imagination_policy(policy, c.imagination_epsilon)
        # averaging over start states keeps the step size independent of |S|
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            _, g_logits, g_reward, g_value = consistency.planning_loss_and_grads(
                self.reward_hat, self.logits, self.v, mu, self.planning_starts(),
                c.K, c.discount, variant, mean_over_starts=True,
            )
            self.v -= c.plan_value_rate * g_value
            if variant is not ScVariant.DYNA:
                self.logits -= c.plan_rate * g_logits
                self.reward_hat -= c.plan_rate * g_reward
        bad = ~(np.isfinite(self.v).all(-1) & np.isfinite(self.logits).all(axis=(-3, -2, -1)))
        if bad.any():
            raise NumericalError(
                "planning update diverged", self.replicas[int(np.argmax(bad))], self.iteration
            )

    def metrics(self, iteration: int) -> list[MetricRecord]:
        c = self.config
        policy = self.behaviour_policy()
        mu = consistency.imagination_policy(policy, c.imagination_epsilon)
        loss, *_ = consistency.planning_loss_and_grads(
            self.reward_hat, self.logits, self.v, mu, self._all_starts,
            c.K, c.discount, ScVariant.DIRECT, need_grads=False,
        )
        tv, reward_err = model_lib.diagnostics_arrays(self.logits, self.reward_hat, self.P, self.r)
        if c.task is Task.EVALUATION:
            primary = value_lib.relative_value_error(self.v, self.v_pi)
            errors = np.atleast_1d(primary)
            returns = [None] * len(self.replicas)
        else:
            if c.greedy_eval:
                q = mdp_lib.action_values(model_lib.softmax(self.logits), self.reward_hat, self.v, c.discount)
                policy = mdp_lib.epsilon_greedy_policy(q, 0.0)
            v_b = mdp_lib.policy_value(self.P, self.r, policy, c.discount)
            primary = (v_b / np.maximum(self.v_star, value_lib.DENOM_FLOOR)).mean(-1)
            returns = list(primary)
            errors = [None] * len(self.replicas)
        records = []
        for k, replica in enumerate(self.replicas):
            values = (primary[k], loss[k], tv[k], reward_err[k])
            if not np.isfinite(values).all():
                raise NumericalError("non-finite metric", replica, iteration)
            records.append(MetricRecord(
                replica=replica,
                iteration=iteration,
                value_error=None if errors[k] is None else float(errors[k]),
                normalized_return=None if returns[k] is None else float(returns[k]),
                sc_loss=float(loss[k]),
                model_tv=float(tv[k]),
                model_reward_err=float(reward_err[k]),
            ))
        return records


class Run:
    """A run over a set of replicas; iterate for records, then read final state.

    ``mdps`` optionally supplies one ground-truth MDP per replica instead of
    generating Garnets from the replica seeds. ``initial`` optionally supplies
    one ``(ModelParams, values)`` pair per replica, replacing the random
    initialisation after it has been drawn.
    """

    def __init__(self, config: ExperimentConfig, replicas=None, mdps=None, initial=None):
        self.config = config
        replicas = range(config.n_replicas) if replicas is None else replicas
        self.batch = _Batch(config, replicas, mdps)
        if initial is not None:
            if len(initial) != len(self.batch.replicas):
                raise InvalidArgumentError("initial: need one (model, values) pair per replica")
            self.batch.reward_hat = np.stack([m.reward_hat for m, _ in initial]).astype(float)
            self.batch.logits = np.stack([m.logits for m, _ in initial]).astype(float)
            self.batch.v = np.stack([v for _, v in initial]).astype(float)

    def __iter__(self) -> Iterator[MetricRecord]:
        batch, config = self.batch, self.config
        yield from batch.metrics(0)
        for t in range(1, config.iterations + 1):
            batch.step()
            if t % config.eval_interval == 0 or t == config.iterations:
                yield from batch.metrics(t)

    def final_state(self) -> list[tuple[int, model_lib.ModelParams, np.ndarray]]:
        b = self.batch
        return [
            (rep, model_lib.ModelParams(b.reward_hat[k].copy(), b.logits[k].copy()), b.v[k].copy())
            for k, rep in enumerate(b.replicas)
        ]


def run_policy_evaluation(config: ExperimentConfig, replicas=None, mdps=None, initial=None) -> Run:
    """Evaluate the uniform random policy; records come in (iteration, replica) order."""
    if config.task is not Task.EVALUATION:
        raise InvalidArgumentError("task: run_policy_evaluation needs task=evaluation")
    return Run(config, replicas, mdps, initial)


def run_control(config: ExperimentConfig, replicas=None, mdps=None, initial=None) -> Run:
    """Act epsilon-greedily on model-based action values; metric is normalised return."""
    if config.task is not Task.CONTROL:
        raise InvalidArgumentError("task: run_control needs task=control")
    return Run(config, replicas, mdps, initial)


def run(config: ExperimentConfig, replicas=None, mdps=None, initial=None) -> Run:
    if config.task is Task.EVALUATION:
        return run_policy_evaluation(config, replicas, mdps, initial)
    return run_control(config, replicas, mdps, initial)


def metric_of(record: MetricRecord) -> float:
    return record.value_error if record.value_error is not None else record.normalized_return


def curves(records: Sequence[MetricRecord]) -> tuple[np.ndarray, np.ndarray]:
    """``(iterations, values[replica, point])`` of the primary metric."""
    replicas = sorted({r.replica for r in records})
    iterations = sorted({r.iteration for r in records})
    col = {it: j for j, it in enumerate(iterations)}
    row = {rep: i for i, rep in enumerate(replicas)}
    out = np.full((len(replicas), len(iterations)), np.nan)
    for rec in records:
        out[row[rec.replica], col[rec.iteration]] = metric_of(rec)
    return np.asarray(iterations), out


def compute_auc(errors: Sequence[float], interval: float = 1.0) -> float:
    """Rectangular-rule area: each recorded point covers ``interval`` iterations."""
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise InvalidArgumentError("cannot integrate an empty error curve")
    return float(errors.mean() * errors.size * interval)


def aggregate_ci(
    values: Sequence[float],
    level: float = 0.9,
    resamples: int = 1000,
    rng: np.random.Generator | None = None,
    key: float = 0.0,
) -> SummaryStat:
    """Sample mean with a percentile-bootstrap interval at ``level``."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise InvalidArgumentError("cannot aggregate an empty sample")
    if not 0.0 <= level < 1.0:
        raise InvalidArgumentError("level must lie in [0, 1)")
    mean = float(values.mean())
    if level == 0.0 or values.size == 1 or np.all(values == values[0]):
        return SummaryStat(key, mean, mean, mean)
    rng = np.random.default_rng(0) if rng is None else rng
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    boot = values[idx].mean(axis=1)
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    # percentile intervals of very skewed samples can miss the mean
    return SummaryStat(key, mean, min(float(lo), mean), max(float(hi), mean))


def summarize(
    records: Sequence[MetricRecord], level: float = 0.9, resamples: int = 1000, seed: int = 0
) -> list[SummaryStat]:
    iterations, values = curves(records)
    rng = np.random.default_rng(seed)
    return [
        aggregate_ci(values[:, j], level, resamples, rng, key=int(it))
        for j, it in enumerate(iterations)
    ]


def final_values(records: Sequence[MetricRecord]) -> np.ndarray:
    _, values = curves(records)
    return values[:, -1]


def run_robustness_sweep(
    config: ExperimentConfig,
    sigma_grid: Sequence[float],
    target: InitTarget,
    seed: int = 0,
) -> list[SummaryStat]:
    """AUC of the value-error curve per noise level, replicas paired across levels."""
    if config.task is not Task.EVALUATION:
        raise InvalidArgumentError("task: the robustness sweep needs task=evaluation")
    if len(sigma_grid) == 0:
        raise InvalidArgumentError("sigma_grid: must be non-empty")
    rng = np.random.default_rng(seed)
    rows = []
    for sigma in sigma_grid:
        noisy = config.replace(
            reward_noise_sigma=sigma if target is InitTarget.REWARD else None,
            value_noise_sigma=sigma if target is InitTarget.VALUE else None,
        )
        _, values = curves(list(run_policy_evaluation(noisy)))
        aucs = [compute_auc(v, config.eval_interval) for v in values]
        rows.append(aggregate_ci(aucs, rng=rng, key=float(sigma)))
        log.info("sigma=%g auc=%.4g", sigma, rows[-1].mean)
    return rows


ALPHA_TD_GRID = (0.01, 0.03, 0.1, 0.3)
MODEL_RATE_GRID = (0.1, 0.3, 1.0, 3.0)
SC_MULTIPLIER_GRID = (0.1, 0.3, 1.0, 3.0, 10.0)


def run_lr_sweep(
    config: ExperimentConfig,
    grids: dict[str, Sequence[float]],
    seed: int = 0,
) -> list[tuple[dict[str, float], SummaryStat]]:
    """Cartesian sweep over ``alpha_td``, ``alpha_model`` and ``sc_multiplier``.

    ``sc_multiplier`` scales the model rate to give the planning rate. Each
    cell reports the final-iteration metric with its interval.
    """
    unknown = set(grids) - {"alpha_td", "alpha_model", "sc_multiplier"}
    if unknown:
        raise InvalidArgumentError(f"unknown sweep grid(s): {sorted(unknown)}")
    if any(len(g) == 0 for g in grids.values()):
        raise InvalidArgumentError("sweep grids must be non-empty")
    names = sorted(grids)
    rng = np.random.default_rng(seed)
    table = []
    for combo in itertools.product(*(grids[n] for n in names)):
        cell = dict(zip(names, combo))
        changes = {k: v for k, v in cell.items() if k != "sc_multiplier"}
        cfg = config.replace(**changes)
        if "sc_multiplier" in cell:
            cfg = cfg.replace(alpha_plan=cell["sc_multiplier"] * cfg.model_rate)
        stat = aggregate_ci(final_values(list(run(cfg))), rng=rng)
        table.append((cell, stat))
    return table
