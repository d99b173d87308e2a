import numpy as np
import pytest

from sc_mbrl import experiment as ex
from sc_mbrl.errors import InvalidArgumentError
from sc_mbrl.mdp import TabularMdp, generate_garnet, optimal_value_exact, policy_value_exact, uniform_policy
from sc_mbrl.model import ModelParams, encode_transitions


def small(**kw):
    base = dict(n_states=6, n_actions=2, iterations=30, n_replicas=3, eval_interval=10)
    base.update(kw)
    return ex.ExperimentConfig(**base)


class TestConfig:
    def test_default_hyperparameters(self):
        c = ex.ExperimentConfig()
        assert (c.n_states, c.n_actions, c.discount, c.batch_size, c.K) == (20, 4, 0.99, 8, 2)
        assert (c.alpha_td, c.n_replicas) == (0.03, 30)
        assert c.model_rate == 1.0 and c.plan_rate == 10.0
        ve = c.replace(model_objective=ex.ModelObjective.VE)
        assert ve.model_rate == 3.0 and ve.plan_rate == 0.3

    def test_dyna_plans_at_td_rate(self):
        assert small(algorithm=ex.Algorithm.DYNA).plan_rate == 0.03

    @pytest.mark.parametrize("changes, key", [
        ({"epsilon": 0.1}, "epsilon"),
        ({"alpha_td": 0.0}, "alpha_td"),
        ({"n_replicas": 0}, "n_replicas"),
        ({"alpha_plan": -1.0}, "alpha_plan"),
        ({"task": ex.Task.CONTROL}, "epsilon"),
    ])
    def test_rejects(self, changes, key):
        with pytest.raises(InvalidArgumentError, match=key):
            small(**changes)


class TestEvaluation:
    def test_deterministic(self):
        cfg = small(algorithm=ex.Algorithm.SC_DIRECT)
        assert list(ex.run(cfg)) == list(ex.run(cfg))

    def test_zero_iterations(self):
        cfg = small(iterations=0)
        records = list(ex.run(cfg))
        assert [r.iteration for r in records] == [0, 0, 0]
        assert all(r.normalized_return is None for r in records)

    def test_initial_error_matches_init(self):
        cfg = small(iterations=0, n_replicas=1)
        run = ex.run(cfg)
        (rec,) = list(run)
        b = run.batch
        err = np.mean(np.abs(b.v[0] - b.v_pi[0]) / np.maximum(np.abs(b.v_pi[0]), 0.01))
        assert rec.value_error == pytest.approx(err, rel=1e-12)

    def test_replica_subsets_reproduce(self):
        cfg = small(algorithm=ex.Algorithm.SC_RESIDUAL)
        full = [r for r in ex.run(cfg) if r.replica == 2]
        alone = list(ex.run(cfg, replicas=[2]))
        assert full == alone

    def test_model_free_ignores_model_objective(self):
        mle = small(algorithm=ex.Algorithm.MODEL_FREE)
        ve = mle.replace(model_objective=ex.ModelObjective.VE)
        a = [r.value_error for r in ex.run(mle)]
        b = [r.value_error for r in ex.run(ve)]
        assert a == b

    def test_iid_collection_runs(self):
        records = list(ex.run(small(collection=ex.Collection.IID)))
        assert len(records) == 3 * 4

    def test_sampled_starts_and_eps_mix(self):
        records = list(ex.run(small(planning_starts=3, imagination_epsilon=0.5)))
        assert all(np.isfinite(r.value_error) for r in records)

    def test_given_mdp_is_used(self):
        mdp = generate_garnet(6, 2, 99)
        run = ex.run(small(iterations=0, n_replicas=2), mdps=[mdp, mdp])
        list(run)
        assert np.array_equal(run.batch.P[1], mdp.transitions)

    def test_perfect_values_stay_near_zero_error(self):
        mdp = generate_garnet(6, 2, 5)
        v = policy_value_exact(mdp, uniform_policy(6, 2))
        init = [(ModelParams(mdp.rewards.copy(), encode_transitions(mdp.transitions)), v)]
        cfg = small(n_replicas=1, iterations=0, algorithm=ex.Algorithm.SC_DIRECT)
        (rec,) = list(ex.run(cfg, mdps=[mdp], initial=init))
        assert rec.value_error < 1e-12
        assert rec.sc_loss < 1e-8
        assert rec.model_tv < 1e-10

    def test_model_free_learns(self):
        cfg = ex.ExperimentConfig(algorithm=ex.Algorithm.MODEL_FREE, eval_interval=2000)
        _, values = ex.curves(list(ex.run(cfg)))
        first = ex.aggregate_ci(values[:, 0])
        last = ex.aggregate_ci(values[:, -1])
        assert last.ci_hi < first.ci_lo


class TestControl:
    def test_full_exploration_equals_uniform(self):
        cfg = small(task=ex.Task.CONTROL, epsilon=1.0)
        run = ex.run(cfg)
        records = list(run)
        b = run.batch
        for rec in records:
            k = rec.replica
            mdp = TabularMdp(b.P[k], b.r[k], cfg.discount)
            v_u = policy_value_exact(mdp, uniform_policy(6, 2))
            v_star = optimal_value_exact(mdp)
            expected = np.mean(v_u / np.maximum(v_star, 0.01))
            assert rec.normalized_return == pytest.approx(expected, rel=1e-10)
            assert rec.value_error is None

    def test_perfect_init_is_optimal(self):
        mdp = generate_garnet(6, 2, 3)
        mdp = TabularMdp(mdp.transitions, mdp.rewards + 5.0, mdp.discount)
        v_star = optimal_value_exact(mdp)
        assert (v_star >= 0.01).all()
        init = [(ModelParams(mdp.rewards.copy(), encode_transitions(mdp.transitions)), v_star)]
        cfg = small(task=ex.Task.CONTROL, epsilon=0.0, iterations=0, n_replicas=1, greedy_eval=True)
        (rec,) = list(ex.run(cfg, mdps=[mdp], initial=init))
        assert rec.normalized_return == pytest.approx(1.0, abs=1e-9)

    def test_run_control_rejects_evaluation(self):
        with pytest.raises(InvalidArgumentError):
            ex.run_control(small())


class TestAuc:
    def test_constant(self):
        assert ex.compute_auc([2.0] * 50) == 100.0
        assert ex.compute_auc([3.0]) == 3.0
        assert ex.compute_auc([1.0, 1.0], interval=10) == 20.0

    def test_against_trapezoid(self, rng):
        y = rng.random(200)
        trap = np.sum((y[1:] + y[:-1]) / 2)
        # rectangles over-count by one half of each endpoint
        assert abs(ex.compute_auc(y) - trap - (y[0] + y[-1]) / 2) < 1e-9

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            ex.compute_auc([])


class TestAggregate:
    def test_degenerate(self):
        s = ex.aggregate_ci([2.5] * 10)
        assert (s.mean, s.ci_lo, s.ci_hi) == (2.5, 2.5, 2.5)
        s = ex.aggregate_ci([1.0, 2.0, 4.0], level=0.0)
        assert s.ci_lo == s.mean == s.ci_hi
        s = ex.aggregate_ci([3.0])
        assert s.ci_lo == s.mean == s.ci_hi == 3.0

    def test_normal_band(self):
        x = np.random.default_rng(0).standard_normal(10_000)
        s = ex.aggregate_ci(x, rng=np.random.default_rng(1))
        half = 1.6449 * x.std() / np.sqrt(x.size)
        assert abs((s.ci_hi - s.mean) - half) <= 0.2 * half
        assert abs((s.mean - s.ci_lo) - half) <= 0.2 * half

    def test_brackets_mean(self, rng):
        for _ in range(20):
            s = ex.aggregate_ci(rng.lognormal(0, 2, size=30), rng=rng)
            assert s.ci_lo <= s.mean <= s.ci_hi

    def test_deterministic(self):
        x = np.arange(10.0)
        assert ex.aggregate_ci(x, rng=np.random.default_rng(4)) == ex.aggregate_ci(x, rng=np.random.default_rng(4))

    def test_empty(self):
        with pytest.raises(InvalidArgumentError):
            ex.aggregate_ci([])


class TestSweeps:
    def test_singleton_robustness_grid(self):
        rows = ex.run_robustness_sweep(small(), [0.5], ex.InitTarget.REWARD)
        assert len(rows) == 1 and rows[0].key == 0.5

    def test_value_init_at_truth_lowers_auc(self):
        cfg = small(algorithm=ex.Algorithm.DYNA, n_replicas=5)
        (noiseless,) = ex.run_robustness_sweep(cfg, [0.0], ex.InitTarget.VALUE)
        _, values = ex.curves(list(ex.run(cfg)))
        default = np.mean([ex.compute_auc(v, cfg.eval_interval) for v in values])
        assert noiseless.mean < default

    def test_robustness_needs_evaluation(self):
        with pytest.raises(InvalidArgumentError):
            ex.run_robustness_sweep(small(task=ex.Task.CONTROL, epsilon=0.1), [0.0], ex.InitTarget.REWARD)

    def test_lr_sweep_singleton(self):
        table = ex.run_lr_sweep(small(), {"alpha_td": [0.03]})
        assert len(table) == 1 and table[0][0] == {"alpha_td": 0.03}

    def test_lr_sweep_grid(self):
        cfg = small(iterations=5, eval_interval=5, n_replicas=2)
        table = ex.run_lr_sweep(cfg, {"alpha_td": [0.03, 0.1], "sc_multiplier": [0.1, 1.0]})
        cells = [cell for cell, _ in table]
        assert len(cells) == 4
        assert {"alpha_td": 0.03, "sc_multiplier": 1.0} in cells

    def test_default_rates_in_grids(self):
        assert 0.03 in ex.ALPHA_TD_GRID
        assert {1.0, 3.0} <= set(ex.MODEL_RATE_GRID)
        # 10 = 10 x 1.0 (MLE) and 0.3 = 0.1 x 3.0 (VE)
        assert {10.0, 0.1} <= set(ex.SC_MULTIPLIER_GRID)

    def test_lr_sweep_rejects_unknown_grid(self):
        with pytest.raises(InvalidArgumentError):
            ex.run_lr_sweep(small(), {"alpha_bogus": [1.0]})


def test_summaries_bracket_mean():
    rows = ex.summarize(list(ex.run(small())))
    assert [r.key for r in rows] == [0, 10, 20, 30]
    assert all(r.ci_lo <= r.mean <= r.ci_hi for r in rows)
