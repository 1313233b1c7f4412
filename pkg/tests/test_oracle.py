import numpy as np
import pytest

from lowswitch.checks import random_mdp
from lowswitch.function_class import BudgetExceeded, ConfidenceParams, Covariate, LinearClass, SubsampledDataset, TabularClass
from lowswitch.mdp import EpisodicMdp, Policy, exact_policy_value, exact_q_star
from lowswitch.oracle import (
    brute_force_policy_values,
    eluder_dimension_estimate,
    sandwich_check,
    verify_certificate,
    verify_eluder,
)
from lowswitch.subsampler import SamplerConfig, maybe_add


def multiscale_pool(n_dirs=8, n_scales=25):
    """Covariates whose features span 8 directions and half-octave norms, small to large."""
    ang = np.arange(n_dirs) * np.pi / n_dirs
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    norms = 2.0 ** (-np.arange(n_scales)[::-1] / 2)
    feats = (norms[:, None, None] * dirs[None]).reshape(-1, 2)
    cls = LinearClass(2, 1.0, 1.0, feats[:, None, :])
    return cls, [Covariate(i, 0) for i in range(len(feats))]


class TestPolicyEnumeration:
    def test_two_by_two_count_and_hand_value(self):
        P = np.zeros((2, 2, 2, 2))
        P[:, :, 0, 0] = 1.0
        P[:, :, 1, 1] = 1.0
        r = np.array([[[0.1, 0.4], [0.2, 0.3]], [[0.5, 0.6], [0.7, 0.8]]])
        mdp = EpisodicMdp(P, r, 0)
        pols, vals = brute_force_policy_values(mdp)
        assert len(vals) == 16
        # policy index 0: always action 0 -> stay in state 0: 0.1 + 0.5
        assert vals[0] == pytest.approx(0.6, abs=1e-15)
        # best: step 1 action 1 moves to state 1, then action 1 pays 0.8
        assert vals.max() == pytest.approx(1.2, abs=1e-15)

    def test_matches_policy_evaluation(self):
        mdp = random_mdp(np.random.default_rng(3), 2, 2, 3)
        pols, vals = brute_force_policy_values(mdp)
        for acts, v in zip(pols[::7], vals[::7]):
            assert v == pytest.approx(exact_policy_value(mdp, Policy(acts)).V[0, mdp.initial_state], abs=1e-12)

    def test_max_is_optimal_value(self):
        for seed in range(10):
            mdp = random_mdp(np.random.default_rng(seed), 2, 3, 3)
            _, vals = brute_force_policy_values(mdp)
            assert abs(vals.max() - exact_q_star(mdp).V[0, mdp.initial_state]) <= 1e-10

    def test_reward_shift(self):
        mdp = random_mdp(np.random.default_rng(1), 2, 2, 3)
        scaled = EpisodicMdp(mdp.transitions, mdp.rewards * 0.9, mdp.initial_state)
        shifted = EpisodicMdp(mdp.transitions, mdp.rewards * 0.9 + 0.1, mdp.initial_state)
        _, a = brute_force_policy_values(scaled)
        _, b = brute_force_policy_values(shifted)
        np.testing.assert_allclose(b - a, 0.1 * 3, atol=1e-12)

    def test_budget(self):
        mdp = random_mdp(np.random.default_rng(0), 4, 3, 4)
        with pytest.raises(BudgetExceeded):
            brute_force_policy_values(mdp)


class TestEluder:
    def test_tabular_equals_cell_count(self):
        cls = TabularClass(2, 3, 2.0)
        pool = [Covariate(s, a) for s in range(2) for a in range(3)] * 3
        est = eluder_dimension_estimate(cls, 0.1, pool)
        assert est.length == 6
        assert verify_eluder(cls, est)

    def test_empty_pool(self):
        assert eluder_dimension_estimate(TabularClass(2, 2, 2.0), 0.1, []).length == 0

    def test_range_below_eps(self):
        cls = TabularClass(1, 2, 0.05)
        assert eluder_dimension_estimate(cls, 0.1, [Covariate(0, 0), Covariate(0, 1)]).length == 0

    def test_tabular_monotone_in_eps(self):
        cls = TabularClass(2, 2, 1.0)
        pool = [Covariate(s, a) for s in range(2) for a in range(2)]
        lengths = [eluder_dimension_estimate(cls, e, pool).length for e in (2.0, 0.9, 0.5, 0.1)]
        assert lengths == sorted(lengths)

    def test_linear_lengths_grow_and_verify(self):
        cls, pool = multiscale_pool()
        ests = [eluder_dimension_estimate(cls, e, pool) for e in (0.5, 0.1, 0.02)]
        lengths = [e.length for e in ests]
        assert lengths == sorted(lengths) and lengths[-1] > lengths[0]
        assert all(verify_eluder(cls, e) for e in ests)

    def test_bad_certificate_rejected(self):
        cls = TabularClass(1, 2, 2.0)
        f = np.ones(2)
        assert not verify_certificate(cls, [], Covariate(0, 0), 0.1, (f, f))

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            eluder_dimension_estimate(TabularClass(4, 4, 1.0), 0.1, [Covariate(0, 0)])


class TestSandwich:
    def setup_method(self):
        self.cls = TabularClass(2, 2, 2.0)

    def test_identical_datasets(self):
        rng = np.random.default_rng(0)
        Z = SubsampledDataset.from_sequence(Covariate(int(rng.integers(2)), int(rng.integers(2))) for _ in range(30))
        for beta in (0.01, 1.0, 50.0):
            rep = sandwich_check(self.cls, Z, Z.copy(), beta, 0.5)
            assert rep.holds and rep.bonus_ordered

    def test_empty(self):
        rep = sandwich_check(self.cls, SubsampledDataset(), SubsampledDataset(), 1.0, 0.5)
        assert rep.holds
        np.testing.assert_array_equal(rep.bonus_hat, 2.0)

    def test_always_accept_sampler(self):
        rng = np.random.default_rng(1)
        params = ConfidenceParams(1.0, 1e9)
        cfg = SamplerConfig(1e9, 0.1, 100, 1.0)  # raw probability always clipped to 1
        Z, Zhat = SubsampledDataset(), SubsampledDataset()
        for _ in range(40):
            z = Covariate(int(rng.integers(2)), int(rng.integers(2)))
            Z.add(z)
            maybe_add(Zhat, z, self.cls, params, cfg, rng)
        assert Zhat.counts == Z.counts
        assert sandwich_check(self.cls, Z, Zhat, 1.0, 0.5, alphas=[1.0, 100.0]).holds

    def test_detects_violation(self):
        Z = SubsampledDataset()
        Z.add(Covariate(0, 0), 1000)
        rep = sandwich_check(self.cls, Z, SubsampledDataset(), 1.0, 0.5)
        assert not rep.holds
        assert {v[3] for v in rep.violations} == {"hat-not-over"}

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            sandwich_check(TabularClass(3, 2, 2.0), SubsampledDataset(), SubsampledDataset(), 1.0, 0.1)


class TestSandwichAlong:
    def test_agrees_with_pairwise_check(self):
        from lowswitch.oracle import sandwich_holds_along

        cls = TabularClass(2, 2, 2.0)
        rng = np.random.default_rng(3)
        zc, hc = [], []
        Z, Zh = SubsampledDataset(), SubsampledDataset()
        expect = []
        for _ in range(400):
            z = Covariate(int(rng.integers(2)), int(rng.integers(2)))
            Z.add(z)
            if rng.random() < 0.01:
                Zh.add(z, 2)
            zc.append([Z.multiplicity(Covariate(c // 2, c % 2)) for c in range(4)])
            hc.append([Zh.multiplicity(Covariate(c // 2, c % 2)) for c in range(4)])
            expect.append(sandwich_check(cls, Z, Zh, 1.0, 0.5, cap=500.0, alphas=[1.0, 100.0]).holds)
        got = sandwich_holds_along(cls, np.array(zc), np.array(hc), 0.5, 500.0, [1.0, 100.0])
        np.testing.assert_array_equal(got, expect)
        assert not all(expect) and any(expect)
