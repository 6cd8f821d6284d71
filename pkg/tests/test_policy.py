"""Policy pipeline: price primitives, state machine, trace-level identities."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pricesim.policy as policy_mod
from pricesim import Link, PolicyConfig, PolicyState, SalesRecord, \
    perturbation, policy_price, policy_update, price_optimize, project_price
from pricesim.demand import design_vector, extend_context
from pricesim.errors import ConfigError
from pricesim.harness import run_replication
from conftest import make_instance


def philox(seed, key=()):
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=key)))


class TestPriceOptimize:
    def test_linear_vertex(self):
        assert price_optimize(Link.LINEAR, 1.0, -0.25, (0, 10)) == pytest.approx(2.0, abs=1e-14)

    def test_linear_clip_below(self):
        assert price_optimize(Link.LINEAR, 1.0, -0.25, (3, 10)) == pytest.approx(3.0)

    def test_linear_beta_zero_boundary(self):
        assert price_optimize(Link.LINEAR, 1.0, 0.0, (0, 10)) == 10.0
        assert price_optimize(Link.LINEAR, -1.0, 0.0, (0, 10)) == 0.0
        # tie at ax = 0 resolves to the lower price
        assert price_optimize(Link.LINEAR, 0.0, 0.0, (0, 10)) == 0.0

    def test_logistic_known_root(self):
        p = price_optimize(Link.LOGISTIC, 0.0, -1.0, (0, 10))
        assert p == pytest.approx(1.27846, abs=1e-4)

    def test_logistic_matches_bruteforce(self, rng):
        grid = np.linspace(0.0, 10.0, 200_001)
        for _ in range(20):
            ax = float(rng.uniform(-4, 4))
            beta = float(rng.uniform(-2.0, -0.05))
            p = price_optimize(Link.LOGISTIC, ax, beta, (0, 10))
            rev = grid / (1.0 + np.exp(-(ax + beta * grid)))
            assert p == pytest.approx(float(grid[rev.argmax()]), abs=1e-4)


class TestPerturbation:
    def test_magnitude(self):
        r = philox(1)
        assert abs(perturbation(1.0, 16, 0.0, r)) == pytest.approx(0.5)

    def test_floor_binds(self):
        r = philox(2)
        assert abs(perturbation(1.0, 16, 0.6, r)) == pytest.approx(0.6)

    def test_sign_balance(self):
        r = philox(3)
        signs = [math.copysign(1, perturbation(1.0, 5, 0.0, r))
                 for _ in range(10_000)]
        assert abs(np.mean(signs)) < 0.05

    @given(c1=st.integers(1, 10_000), c2=st.integers(1, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_magnitude_nonincreasing_in_count(self, c1, c2):
        r = philox(4)
        lo, hi = sorted((c1, c2))
        assert abs(perturbation(1.0, hi, 0.0, r)) <= \
            abs(perturbation(1.0, lo, 0.0, r)) + 1e-15


class TestProjectPrice:
    def test_clip_above(self):
        assert project_price(12.0, 0.5, (0, 10)) == 9.5

    def test_interior(self):
        assert project_price(5.0, 0.5, (0, 10)) == 5.0

    def test_empty_interval_midpoint(self):
        assert project_price(0.9, 0.6, (0, 1)) == pytest.approx(0.5)


class TestPolicyState:
    def make_state(self, inst, kind="CSMP", **kw):
        cfg = PolicyConfig(kind=kind, delta0=1.0, **kw)
        return cfg, PolicyState(cfg, inst.n, inst.d, inst.link, inst.L,
                                inst.price_bounds, philox(5))

    def test_update_bookkeeping(self, small_logistic_instance):
        inst = small_logistic_instance
        cfg, state = self.make_state(inst)
        rng = philox(6)
        for t in range(1, 30):
            i = int(rng.integers(inst.n))
            u = design_vector(extend_context(rng.uniform(-0.4, 0.4, inst.d)),
                              float(rng.uniform(0, 10)))
            policy_update(state, i, SalesRecord(t=t, product=i, u=u,
                                                delta=0.1, outcome=1))
        for i in range(inst.n):
            h = state.histories[i]
            V, b, sdd, sdsq = h.recompute()
            assert np.allclose(h.V, V, rtol=1e-10)
            assert h.count == state.counts[i]

    def test_update_commutes_across_products(self, small_logistic_instance):
        inst = small_logistic_instance
        r1 = SalesRecord(t=1, product=0, u=np.ones(inst.d + 2), delta=0.1,
                         outcome=1)
        r2 = SalesRecord(t=2, product=1, u=2 * np.ones(inst.d + 2), delta=-0.2,
                         outcome=0)
        _, s_a = self.make_state(inst)
        policy_update(s_a, 0, r1)
        policy_update(s_a, 1, r2)
        _, s_b = self.make_state(inst)
        policy_update(s_b, 1, r2)
        policy_update(s_b, 0, r1)
        for i in (0, 1):
            assert np.array_equal(s_a.histories[i].V, s_b.histories[i].V)
            assert s_a.counts[i] == s_b.counts[i]

    def test_cache_bit_identical_to_recompute(self, small_logistic_instance):
        from pricesim import glm_mle, min_eigenvalue

        inst = small_logistic_instance
        cfg, state = self.make_state(inst)
        rng = philox(7)
        t = 1
        for _ in range(60):
            i = int(rng.integers(inst.n))
            x = extend_context(rng.uniform(-0.4, 0.4, inst.d))
            p = float(rng.uniform(0, 10))
            policy_update(state, i, SalesRecord(
                t=t, product=i, u=design_vector(x, p), delta=0.1,
                outcome=int(rng.random() < 0.5)))
            t += 1
        state.refresh_dirty()
        for i in range(inst.n):
            h = state.histories[i]
            want = glm_mle(h.records, inst.link, inst.L, dim=inst.d + 2)
            assert np.array_equal(state.theta_hat[i], want.vector)
            assert state.lam_min[i] == min_eigenvalue(h.V)

    def test_individual_estimate_helper(self, small_logistic_instance):
        from pricesim.estimation import ProductHistory, individual_estimate

        inst = small_logistic_instance
        h = ProductHistory(inst.d + 2, product=0)
        rng = philox(17)
        for t in range(1, 40):
            x = extend_context(rng.uniform(-0.4, 0.4, inst.d))
            h.append(SalesRecord(t=t, product=0,
                                 u=design_vector(x, float(rng.uniform(0, 10))),
                                 delta=0.1, outcome=int(rng.random() < 0.5)))
        est = individual_estimate(h, inst.link, inst.L, t=40, c=0.8)
        assert est.bound > 0 and math.isfinite(est.bound)
        assert est.theta_hat.norm <= inst.L + 1e-9

    def test_m1_neighborhood_is_everything_under_lemma5(self, monkeypatch):
        inst = make_instance(seed=44, n=8, m=1, d=2)
        cfg = PolicyConfig(kind="CSMP", name="csmp")
        state = PolicyState(cfg, inst.n, inst.d, inst.link, inst.L,
                            inst.price_bounds, philox(10))
        state.theta_hat = inst.theta.copy()
        monkeypatch.setattr(PolicyState, "individual_bounds",
                            lambda self, t: np.full(self.n, 0.05))
        state.dirty[:] = False
        _, diag = policy_price(state, cfg, 2, extend_context(np.zeros(2)), 2)
        assert len(diag.neighborhood) == inst.n

    def test_record_product_mismatch(self, small_logistic_instance):
        inst = small_logistic_instance
        _, state = self.make_state(inst)
        with pytest.raises(ConfigError):
            policy_update(state, 1, SalesRecord(
                t=1, product=0, u=np.ones(inst.d + 2), delta=0.1, outcome=1))

    def test_cold_start_pools_everything(self, small_logistic_instance):
        inst = small_logistic_instance
        cfg, state = self.make_state(inst)
        x = extend_context(np.zeros(inst.d))
        posted, diag = policy_price(state, cfg, 0, x, 1)
        assert len(diag.neighborhood) == inst.n
        assert np.array_equal(diag.theta_tilde, np.zeros(inst.d + 2))
        # pooled count 1 -> |delta| = delta0; prices stay in bounds
        assert abs(diag.delta) == pytest.approx(1.0)
        lo, hi = inst.price_bounds
        assert lo <= posted <= hi

    def test_smp_ind_neighborhood_singleton(self, small_logistic_instance):
        inst = small_logistic_instance
        cfg, state = self.make_state(inst, kind="SMP_IND")
        x = extend_context(np.zeros(inst.d))
        _, diag = policy_price(state, cfg, 3, x, 1)
        assert diag.neighborhood.members == {3}
        assert diag.neighborhood.anchor == 3

    def test_smp_one_neighborhood_everything(self, small_logistic_instance):
        inst = small_logistic_instance
        cfg, state = self.make_state(inst, kind="SMP_ONE")
        x = extend_context(np.zeros(inst.d))
        _, diag = policy_price(state, cfg, 3, x, 1)
        assert len(diag.neighborhood) == inst.n

    def test_kmeans_policy_clusters(self, small_logistic_instance):
        inst = small_logistic_instance
        cfg, state = self.make_state(inst, kind="CSMP_KMEANS", K=4)
        rng = philox(8)
        # seed every product with a couple of records so estimates spread
        t = 1
        for _ in range(3):
            for i in range(inst.n):
                x = extend_context(rng.uniform(-0.4, 0.4, inst.d))
                p = float(rng.uniform(0, 10))
                prob = 1 / (1 + math.exp(-(inst.theta[i] @ design_vector(x, p))))
                policy_update(state, i, SalesRecord(
                    t=t, product=i, u=design_vector(x, p), delta=0.1,
                    outcome=int(rng.random() < prob)))
                t += 1
        x = extend_context(np.zeros(inst.d))
        _, diag = policy_price(state, cfg, 0, x, t)
        assert 1 <= len(diag.neighborhood) <= inst.n
        assert 0 in diag.neighborhood


class TestTraceIdentities:
    def test_csmp_equals_smp_one_when_single_product(self):
        inst = make_instance(seed=41, n=1, m=1, d=2)
        tr_a = run_replication(inst, PolicyConfig(kind="CSMP", name="a"),
                               300, np.random.SeedSequence(5))
        tr_b = run_replication(inst, PolicyConfig(kind="SMP_ONE", name="b"),
                               300, np.random.SeedSequence(5))
        assert np.array_equal(tr_a.price, tr_b.price)
        assert np.array_equal(tr_a.outcome, tr_b.outcome)

    def test_csmp_with_forced_singletons_equals_smp_ind(self, monkeypatch):
        inst = make_instance(seed=42, n=6, m=2, d=2)

        def forced_members(self, product, t):
            if self.config.kind is policy_mod.PolicyKind.CSMP:
                return np.array([product])
            return orig(self, product, t)

        orig = policy_mod.PolicyState._members
        monkeypatch.setattr(policy_mod.PolicyState, "_members", forced_members)
        tr_a = run_replication(inst, PolicyConfig(kind="CSMP", name="a"),
                               400, np.random.SeedSequence(6))
        monkeypatch.setattr(policy_mod.PolicyState, "_members", orig)
        tr_b = run_replication(inst, PolicyConfig(kind="SMP_IND", name="b"),
                               400, np.random.SeedSequence(6))
        assert np.array_equal(tr_a.price, tr_b.price)
        assert np.array_equal(tr_a.cum_regret, tr_b.cum_regret)

    def test_posted_price_always_in_bounds(self):
        inst = make_instance(seed=43, n=2, m=1, d=2)
        tr = run_replication(inst, PolicyConfig(kind="CSMP", name="csmp"),
                             5000, np.random.SeedSequence(7))
        lo, hi = inst.price_bounds
        assert np.all(tr.price >= lo) and np.all(tr.price <= hi)

    def test_lemma5_conditions_give_true_cluster(self,
                                                 small_logistic_instance,
                                                 monkeypatch):
        # inject exact estimates and tiny radii: step (b) returns the true
        # cluster and pooling covers exactly its members' records
        inst = small_logistic_instance
        cfg = PolicyConfig(kind="CSMP", name="csmp")
        state = PolicyState(cfg, inst.n, inst.d, inst.link, inst.L,
                            inst.price_bounds, philox(9))
        state.theta_hat = inst.theta.copy()
        monkeypatch.setattr(
            PolicyState, "individual_bounds",
            lambda self, t: np.full(self.n, inst.gamma / 4.0 * 0.9))
        state.dirty[:] = False
        x = extend_context(np.zeros(inst.d))
        _, diag = policy_price(state, cfg, 5, x, 2)
        want = set(np.flatnonzero(
            inst.assignment == inst.assignment[5]).tolist())
        assert diag.neighborhood.members == want


class TestConfigValidation:
    def test_delta0_positive(self):
        with pytest.raises(ConfigError):
            PolicyConfig(kind="CSMP", delta0=0.0).validate()

    def test_big_delta0_warns(self):
        with pytest.warns(UserWarning):
            PolicyConfig(kind="CSMP", delta0=6.0).validate(
                instance_bounds=(0.0, 10.0))

    def test_kmeans_k_vs_n(self):
        with pytest.raises(ConfigError):
            PolicyConfig(kind="CSMP_KMEANS", K=11).validate(n=10)

    def test_collapsed_linear_constants(self):
        cfg = PolicyConfig.from_dict(
            {"kind": "CSMP_L", "name": "l", "c_collapsed": 0.04})
        assert cfg.c1 == pytest.approx(0.2)
        assert cfg.c2 == pytest.approx(math.sqrt(0.002))

    def test_roundtrip(self):
        cfg = PolicyConfig(kind="CSMP_KMEANS", name="km", K=7, delta0=0.5,
                           B_interval=(-2.0, -0.1))
        back = PolicyConfig.from_dict(cfg.to_dict())
        assert back == cfg
