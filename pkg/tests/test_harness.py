"""Harness: oracle pricing, replication determinism, metrics, aggregation."""

import numpy as np
import pytest

from pricesim import Link, MetricError, PolicyConfig, aggregate, \
    oracle_price, percentage_revenue_loss, run_replication
from pricesim.demand import extend_context
from pricesim.harness import read_trace_csv, run_experiment, \
    true_expected_revenue, write_trace_csv
from conftest import make_instance


class TestOraclePrice:
    def test_linear_closed_form(self):
        inst = make_instance(seed=9, d=1, L=1.0, link=Link.LINEAR)
        theta = inst.theta.copy()
        theta[0] = [1.0, 0.0, -0.25]
        object.__setattr__(inst, "theta", theta)
        x = extend_context(np.zeros(1))
        p, r = oracle_price(inst, 0, x)
        assert p == pytest.approx(2.0, abs=1e-12)
        assert r == pytest.approx(1.0, abs=1e-12)

    def test_logistic_beta_zero_boundary(self):
        inst = make_instance(seed=8, d=2)
        theta = inst.theta.copy()
        theta[0] = 0.0
        object.__setattr__(inst, "theta", theta)
        x = extend_context(np.zeros(2))
        p, r = oracle_price(inst, 0, x)
        assert p == pytest.approx(10.0)
        assert r == pytest.approx(5.0)

    def test_misspec_matches_bruteforce(self, rng):
        inst = make_instance(seed=21, n=6, m=2, d=3, misspec=True)
        grid = np.linspace(0.0, 10.0, 1_000_001)
        for i in range(3):
            z = rng.uniform(-0.5, 0.5, 3)
            x = extend_context(z)
            p, r = oracle_price(inst, i, x)
            mc = inst.misspec[i]
            f = (mc.context_part(z) + mc.b1 * grid + mc.b2 ** 2 * grid ** 2
                 + mc.b3 * grid ** 3)
            rev = grid / (1.0 + np.exp(np.minimum(f, 700)))
            assert r == pytest.approx(float(rev.max()), abs=1e-4)

    def test_oracle_dominates_random_prices(self, rng):
        inst = make_instance(seed=8)
        for _ in range(200):
            i = int(rng.integers(inst.n))
            x = extend_context(rng.uniform(-0.4, 0.4, inst.d))
            p_star, r_star = oracle_price(inst, i, x)
            p = float(rng.uniform(*inst.price_bounds))
            assert true_expected_revenue(inst, i, x, p) <= r_star + 1e-9

    def test_linear_revenue_uses_clamped_probability(self):
        # steep demand: unclamped vertex would overstate revenue
        inst = make_instance(seed=9, d=1, L=1.0, link=Link.LINEAR)
        theta = inst.theta.copy()
        theta[0] = [2.5, 0.0, -0.5]  # prob > 1 for p < 3
        object.__setattr__(inst, "theta", theta)
        x = extend_context(np.zeros(1))
        p, r = oracle_price(inst, 0, x)
        assert p == pytest.approx(3.0, abs=1e-9)  # where prob crosses 1
        assert r == pytest.approx(3.0, abs=1e-9)


class TestRunReplication:
    def test_single_period(self, small_logistic_instance):
        tr = run_replication(small_logistic_instance,
                             PolicyConfig(kind="CSMP", name="csmp"), 1, 0)
        assert tr.T == 1 and len(tr.price) == 1
        assert tr.cum_regret[0] == pytest.approx(tr.inst_regret[0])

    def test_bit_identical_replay(self, small_logistic_instance):
        cfg = PolicyConfig(kind="CSMP", name="csmp")
        a = run_replication(small_logistic_instance, cfg, 500, 11)
        b = run_replication(small_logistic_instance, cfg, 500, 11)
        assert np.array_equal(a.price, b.price)
        assert np.array_equal(a.cum_regret, b.cum_regret)
        assert np.array_equal(a.outcome, b.outcome)
        assert a.clamp_count == b.clamp_count

    def test_oracle_policy_zero_regret(self, small_logistic_instance):
        tr = run_replication(small_logistic_instance,
                             PolicyConfig(kind="ORACLE", name="oracle"),
                             2000, 3)
        assert tr.cum_regret[-1] <= 1e-6 * 2000
        assert np.all(tr.inst_regret >= -1e-9)

    def test_regret_nonnegative_and_prefix_sum(self, small_logistic_instance):
        tr = run_replication(small_logistic_instance,
                             PolicyConfig(kind="CSMP", name="csmp"), 1500, 4)
        assert np.all(tr.inst_regret >= -1e-9)
        assert np.allclose(np.cumsum(tr.inst_regret), tr.cum_regret,
                           rtol=1e-12)

    def test_exhaustive_mode_runs(self, small_logistic_instance):
        tr = run_replication(small_logistic_instance,
                             PolicyConfig(kind="CSMP", name="csmp"), 40, 5,
                             mode="exhaustive")
        lo, hi = small_logistic_instance.price_bounds
        assert np.all((tr.price >= lo) & (tr.price <= hi))

    def test_linear_instance_clamp_counter(self):
        inst = make_instance(seed=9, n=10, m=2, d=2, L=1.0, link=Link.LINEAR)
        tr = run_replication(inst, PolicyConfig(kind="CSMP_L", name="l",
                                                B_interval=(-1.0, -0.01)),
                             800, 6)
        assert tr.clamp_count >= 0
        assert np.all(tr.inst_regret >= -1e-9)

    def test_env_stream_shared_across_policies(self, small_logistic_instance):
        a = run_replication(small_logistic_instance,
                            PolicyConfig(kind="SMP_IND", name="a"), 300, 12)
        b = run_replication(small_logistic_instance,
                            PolicyConfig(kind="SMP_ONE", name="b"), 300, 12)
        assert np.array_equal(a.product, b.product)
        assert np.array_equal(a.p_star, b.p_star)


class TestMetrics:
    def test_loss_zero_for_oracle(self, small_logistic_instance):
        tr = run_replication(small_logistic_instance,
                             PolicyConfig(kind="ORACLE", name="o"), 300, 1)
        assert percentage_revenue_loss(tr) <= 1e-9

    def test_loss_arithmetic(self, small_logistic_instance):
        tr = run_replication(small_logistic_instance,
                             PolicyConfig(kind="CSMP", name="c"), 300, 2)
        assert percentage_revenue_loss(tr) == pytest.approx(
            float(tr.cum_regret[-1] / tr.r_star.sum()), rel=1e-12)

    def test_loss_matches_column_recompute(self, small_logistic_instance):
        tr = run_replication(small_logistic_instance,
                             PolicyConfig(kind="CSMP", name="c"), 200, 3)
        regret = float(np.sum(tr.r_star - tr.r_policy))
        assert percentage_revenue_loss(tr) == pytest.approx(
            regret / float(tr.r_star.sum()), rel=1e-9)

    def test_zero_oracle_revenue_raises(self, small_logistic_instance):
        tr = run_replication(small_logistic_instance,
                             PolicyConfig(kind="CSMP", name="c"), 10, 4)
        tr.r_star[:] = 0.0
        with pytest.raises(MetricError):
            percentage_revenue_loss(tr)


class TestAggregate:
    def run_traces(self, inst, n_reps=3, T=400):
        cfg = PolicyConfig(kind="CSMP", name="csmp")
        return [run_replication(inst, cfg,
                                T, np.random.SeedSequence(9, spawn_key=(k,)),
                                rep=k)
                for k in range(n_reps)]

    def test_identical_traces_zero_std(self, small_logistic_instance):
        tr = self.run_traces(small_logistic_instance, 1)[0]
        summary = aggregate([tr, tr], [100, 400])
        assert summary.std_loss == [0.0, 0.0]
        assert summary.std_regret == [0.0, 0.0]

    def test_hand_computed_mean_std(self, small_logistic_instance):
        a, b, c = self.run_traces(small_logistic_instance, 3)
        summary = aggregate([a, b, c], [400])
        losses = [percentage_revenue_loss(t) for t in (a, b, c)]
        assert summary.mean_loss[0] == pytest.approx(np.mean(losses))
        assert summary.std_loss[0] == pytest.approx(np.std(losses, ddof=1))

    def test_two_value_std(self):
        # sample std with n-1 denominator: {0.1, 0.3} -> 0.1414...
        assert np.std([0.1, 0.3], ddof=1) == pytest.approx(0.14142135, abs=1e-7)

    def test_single_trace_warns(self, small_logistic_instance):
        tr = self.run_traces(small_logistic_instance, 1)[0]
        with pytest.warns(UserWarning):
            summary = aggregate([tr], [400])
        assert summary.std_loss == [0.0]

    def test_default_checkpoint_grid(self):
        from pricesim.config import default_checkpoints
        assert default_checkpoints(30000) == [5000, 10000, 15000, 20000,
                                              25000, 30000]

    def test_recovery_rate_in_unit_interval(self, small_logistic_instance):
        traces = self.run_traces(small_logistic_instance, 2)
        summary = aggregate(traces, [200, 400])
        assert all(0.0 <= r <= 1.0 for r in summary.recovery_rate)

    def test_summary_json_roundtrip(self, tmp_path, small_logistic_instance):
        traces = self.run_traces(small_logistic_instance, 2)
        summary = aggregate(traces, [200, 400])
        path = tmp_path / "s.json"
        summary.save(path)
        from pricesim.harness import ExperimentSummary
        back = ExperimentSummary.load(path)
        assert back == summary


class TestTraceCsv:
    def test_roundtrip_strict(self, tmp_path, small_logistic_instance):
        tr = run_replication(small_logistic_instance,
                             PolicyConfig(kind="CSMP", name="csmp"), 50, 8,
                             rep=4)
        path = tmp_path / "trace.csv"
        write_trace_csv(tr, path)
        cols = read_trace_csv(path)
        assert np.all(cols["rep"] == 4)
        assert np.array_equal(cols["t"], tr.t)
        assert np.allclose(cols["price"], tr.price, rtol=0, atol=0)
        assert np.allclose(cols["cum_regret"], tr.cum_regret, rtol=0, atol=0)

    def test_reader_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("rep,t,product\n1,2,3\n")
        from pricesim.errors import ConfigError
        with pytest.raises(ConfigError):
            read_trace_csv(path)


class TestRunExperiment:
    def test_parallel_matches_serial(self, small_logistic_instance):
        cfg = PolicyConfig(kind="CSMP", name="csmp")
        s1, tr1 = run_experiment(small_logistic_instance, cfg, 200, 4, 123,
                                 [100, 200], jobs=1)
        s2, tr2 = run_experiment(small_logistic_instance, cfg, 200, 4, 123,
                                 [100, 200], jobs=2)
        assert s1.to_json() == s2.to_json()

    def test_rep_reproducible_in_isolation(self, small_logistic_instance):
        cfg = PolicyConfig(kind="CSMP", name="csmp")
        _, traces = run_experiment(small_logistic_instance, cfg, 150, 3, 55,
                                   [150], jobs=1)
        solo = run_replication(small_logistic_instance, cfg, 150,
                               np.random.SeedSequence(55, spawn_key=(2,)),
                               rep=2)
        assert np.array_equal(traces[2].price, solo.price)
