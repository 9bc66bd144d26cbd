import itertools
import math

import numpy as np
import pytest

from dfvpo import theory
from dfvpo.errors import ConditionMismatch, GammaNotOne, StateSpaceTooLarge, SupportViolation
from dfvpo.rng import derive_key
from dfvpo.theory import (
    PolicyTable,
    TabularMDP,
    Trajectory,
    all_trajectories,
    bt_prob,
    eval_policy,
    improved_policy,
    offset_gamma_diagnostic,
    optimal_policy,
    random_mdp,
    random_policy,
    run_suites,
    seq_kl,
    state_objective,
    trajectory_reward,
    uniform_policy,
    verify_bt_equivalence,
    verify_offset,
    verify_optimality,
    verify_policy_improvement,
)


def _mdp_one_level(rewards_row, gamma=1.0, num_conditions=1):
    """Horizon-1 MDP with one reward row per condition."""
    row = np.asarray(rewards_row, dtype=np.float64)
    return TabularMDP(
        condition_probs=np.full(num_conditions, 1.0 / num_conditions),
        alphabet_size=row.size,
        horizon=1,
        rewards=tuple((row.reshape(1, -1),) for _ in range(num_conditions)),
        gamma=gamma,
    )


def _policy_from_rows(mdp, rows_by_level):
    tables = tuple(
        tuple(np.asarray(r, dtype=np.float64) for r in rows_by_level) for _ in range(mdp.num_conditions)
    )
    return PolicyTable(tables=tables)


def enumeration_value_oracle(mdp, policy, c):
    """Independent oracle: exhaustive E[sum gamma^(t-1) R] over trajectories."""
    total = 0.0
    for frames in itertools.product(range(mdp.alphabet_size), repeat=mdp.horizon):
        prob, reward, idx = 1.0, 0.0, 0
        for l, f in enumerate(frames):
            prob *= policy.tables[c][l][idx, f]
            reward += mdp.gamma**l * mdp.rewards[c][l][idx, f]
            idx = idx * mdp.alphabet_size + f
        total += prob * reward
    return total


class TestEvalPolicy:
    def test_zero_rewards_zero_values(self):
        mdp = random_mdp(0, 2, 2, 3)
        zeroed = TabularMDP(
            condition_probs=mdp.condition_probs,
            alphabet_size=2,
            horizon=3,
            rewards=tuple(tuple(np.zeros_like(t) for t in lv) for lv in mdp.rewards),
            gamma=0.9,
        )
        bundle = eval_policy(zeroed, random_policy(1, zeroed))
        for c in range(2):
            for l in range(3):
                assert np.all(bundle.q[c][l] == 0.0)
                assert np.all(bundle.v[c][l] == 0.0)
                assert np.all(bundle.a[c][l] == 0.0)

    def test_one_step_hand_algebra(self):
        r_a, r_b = 0.7, -0.3
        mdp = _mdp_one_level([r_a, r_b])
        bundle = eval_policy(mdp, uniform_policy(mdp))
        mean = (r_a + r_b) / 2.0
        assert math.isclose(bundle.v[0][0][0], mean, rel_tol=1e-15)
        assert math.isclose(bundle.a[0][0][0, 0], r_a - mean, rel_tol=1e-15)
        assert math.isclose(bundle.a[0][0][0, 1], r_b - mean, rel_tol=1e-15)

    def test_matches_trajectory_enumeration_oracle(self):
        mdp = random_mdp(42, num_conditions=2, alphabet_size=2, horizon=2, gamma=0.9)
        policy = random_policy(7, mdp)
        bundle = eval_policy(mdp, policy)
        for c in range(2):
            oracle = enumeration_value_oracle(mdp, policy, c)
            assert abs(bundle.v[c][0][0] - oracle) < 1e-12

    def test_bundle_invariants(self):
        mdp = random_mdp(3, 2, 3, 3, gamma=0.8)
        policy = random_policy(4, mdp)
        bundle = eval_policy(mdp, policy)
        for c in range(mdp.num_conditions):
            assert np.all(bundle.v[c][mdp.horizon] == 0.0)
            for l in range(mdp.horizon):
                np.testing.assert_allclose(bundle.a[c][l], bundle.q[c][l] - bundle.v[c][l][:, None])
                expected = np.sum(policy.tables[c][l] * bundle.a[c][l], axis=1)
                assert np.max(np.abs(expected)) < 1e-10

    def test_state_cap_enforced(self):
        with pytest.raises(StateSpaceTooLarge):
            random_mdp(0, num_conditions=1, alphabet_size=10, horizon=7)


class TestPolicyImprovement:
    def test_identical_policies(self):
        mdp = random_mdp(5, 2, 2, 3, gamma=0.9)
        pi = random_policy(6, mdp)
        rep = verify_policy_improvement(mdp, pi, pi)
        assert rep.premise_holds and rep.conclusion_holds
        assert abs(rep.value_gap) < 1e-12

    def test_greedy_mixture_improves(self):
        mdp = random_mdp(8, 2, 2, 3, gamma=0.9)
        pi = uniform_policy(mdp)
        pi_tilde = improved_policy(9, mdp, pi)
        rep = verify_policy_improvement(mdp, pi, pi_tilde)
        assert rep.premise_holds
        assert rep.conclusion_holds
        assert rep.value_gap >= -1e-12

    def test_suite_500_pairs_no_counterexamples(self):
        results = theory.run_improvement_suite(seed=123, num_pairs=500)
        assert results[0].passed
        assert results[0].detail["pairs_checked"] == 500
        assert results[0].detail["counterexamples"] == 0


class TestBradleyTerry:
    def test_equal_trajectories_half(self):
        mdp = random_mdp(1, 1, 2, 2)
        x = Trajectory(0, (0, 1))
        assert bt_prob(mdp, x, x) == 0.5

    def test_log3_gap_gives_three_quarters(self):
        mdp = _mdp_one_level([math.log(3.0), 0.0])
        p = bt_prob(mdp, Trajectory(0, (0,)), Trajectory(0, (1,)))
        assert abs(p - 0.75) < 1e-15

    def test_complementarity(self):
        mdp = random_mdp(11, 1, 2, 3, gamma=0.9)
        trajs = list(all_trajectories(mdp, 0))
        for x1 in trajs[:4]:
            for x2 in trajs[4:]:
                assert abs(bt_prob(mdp, x1, x2) + bt_prob(mdp, x2, x1) - 1.0) < 1e-15

    def test_translation_invariance(self):
        base = [0.4, -0.2]
        shift = 3.7
        m1 = _mdp_one_level(base)
        m2 = _mdp_one_level([r + shift for r in base])
        x1, x2 = Trajectory(0, (0,)), Trajectory(0, (1,))
        assert abs(bt_prob(m1, x1, x2) - bt_prob(m2, x1, x2)) < 1e-12

    def test_condition_mismatch(self):
        mdp = random_mdp(2, 2, 2, 2)
        with pytest.raises(ConditionMismatch):
            bt_prob(mdp, Trajectory(0, (0, 0)), Trajectory(1, (0, 0)))

    def test_equivalence_identity_and_exhaustive(self):
        for gamma in (1.0, 0.9):
            mdp = random_mdp(17, 2, 2, 3, gamma=gamma)
            policy = random_policy(18, mdp)
            x = Trajectory(0, (1, 0, 1))
            rep = verify_bt_equivalence(mdp, policy, x, x)
            assert rep.reward_side == 0.5 and rep.abs_error < 1e-15
            worst = 0.0
            for c in range(2):
                trajs = list(all_trajectories(mdp, c))
                for x1 in trajs:
                    for x2 in trajs:
                        worst = max(worst, verify_bt_equivalence(mdp, policy, x1, x2).abs_error)
            assert worst < 1e-10


class TestOptimalPolicy:
    def test_two_action_softmax_oracle(self):
        # uniform ref, Q = (1, 0), beta = 1: pi*(a0) = e / (e + 1)
        mdp = _mdp_one_level([1.0, 0.0])
        pi_star, z = optimal_policy(mdp, uniform_policy(mdp), beta=1.0)
        want = math.e / (math.e + 1.0)
        assert abs(pi_star.tables[0][0][0, 0] - want) < 1e-14
        # Z = E_ref[exp(Q)] = (e^1 + e^0) / 2
        assert abs(z[0][0][0] - (math.e + 1.0) / 2.0) < 1e-14

    def test_large_beta_collapses_to_ref(self):
        mdp = random_mdp(21, 2, 3, 3, gamma=0.9)
        ref = random_policy(22, mdp)
        pi_star, _ = optimal_policy(mdp, ref, beta=1e9)
        for c in range(2):
            for l in range(3):
                assert np.max(np.abs(pi_star.tables[c][l] - ref.tables[c][l])) < 1e-6

    def test_rows_are_distributions(self):
        mdp = random_mdp(23, 2, 4, 3, gamma=0.9)
        ref = random_policy(24, mdp)
        pi_star, _ = optimal_policy(mdp, ref, beta=0.5)
        for c in range(2):
            for l in range(3):
                rows = pi_star.tables[c][l]
                assert rows.min() >= 0.0
                assert np.max(np.abs(rows.sum(axis=1) - 1.0)) < 1e-12

    def test_zero_support_ref_respected(self):
        # ref gives one action probability 0: pi* must keep it at 0
        mdp = _mdp_one_level([5.0, 1.0, 0.0])
        ref = _policy_from_rows(mdp, [np.array([[0.0, 0.5, 0.5]])])
        pi_star, _ = optimal_policy(mdp, ref, beta=1.0)
        assert pi_star.tables[0][0][0, 0] == 0.0
        assert abs(pi_star.tables[0][0][0].sum() - 1.0) < 1e-12


class TestOptimality:
    def test_pi_star_equals_its_own_objective(self):
        mdp = random_mdp(31, 1, 2, 2, gamma=0.9)
        ref = random_policy(32, mdp)
        bundle = eval_policy(mdp, ref)
        pi_star, _ = optimal_policy(mdp, ref, beta=1.0)
        row = pi_star.tables[0][0][0]
        obj = state_objective(bundle.a[0][0][0], ref.tables[0][0][0], row, 1.0)
        assert abs(obj - state_objective(bundle.a[0][0][0], ref.tables[0][0][0], row, 1.0)) == 0.0

    def test_dominance_and_closed_form(self):
        mdp = random_mdp(33, 2, 2, 3, gamma=0.95)
        ref = random_policy(34, mdp)
        rep = verify_optimality(mdp, ref, beta=1.0, n_perturbations=1000, seed=35)
        assert rep.max_dominance_violation < 1e-10
        assert rep.max_closed_form_error < 1e-10


class TestSeqKL:
    def test_identical_policies_zero(self):
        mdp = random_mdp(41, 1, 2, 3)
        p = random_policy(42, mdp)
        traj = Trajectory(0, (0, 1, 0))
        assert seq_kl(mdp, traj, p, p) == 0.0

    def test_two_term_hand_arithmetic(self):
        mdp = _mdp_one_level([0.0, 1.0])
        p = _policy_from_rows(mdp, [np.array([[0.5, 0.5]])])
        q = _policy_from_rows(mdp, [np.array([[0.25, 0.75]])])
        got = seq_kl(mdp, Trajectory(0, (0,)), p, q)
        want = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
        assert abs(got - want) < 1e-15
        assert abs(want - 0.143841) < 1e-6

    def test_additivity_along_trajectory(self):
        mdp = random_mdp(43, 1, 2, 4)
        p = random_policy(44, mdp)
        q = random_policy(45, mdp)
        traj = Trajectory(0, (1, 0, 0, 1))
        total = seq_kl(mdp, traj, p, q)
        manual, idx = 0.0, 0
        for l, f in enumerate(traj.frames):
            pr, qr = p.tables[0][l][idx], q.tables[0][l][idx]
            manual += float(np.sum(pr * (np.log(pr) - np.log(qr))))
            idx = idx * 2 + f
        assert abs(total - manual) < 1e-14

    def test_support_violation(self):
        mdp = _mdp_one_level([0.0, 1.0])
        p = _policy_from_rows(mdp, [np.array([[0.5, 0.5]])])
        q = _policy_from_rows(mdp, [np.array([[1.0, 0.0]])])
        with pytest.raises(SupportViolation):
            seq_kl(mdp, Trajectory(0, (0,)), p, q)


class TestOffset:
    def test_identical_trajectories(self):
        mdp = random_mdp(51, 1, 2, 2, gamma=1.0)
        ref = random_policy(52, mdp)
        x = Trajectory(0, (0, 1))
        rep = verify_offset(mdp, ref, 1.0, x, x)
        assert rep.u == 0.0 and rep.delta == 0.0
        assert rep.bt_reward_side == 0.5 and rep.sigma_u_minus_delta == 0.5

    def test_exhaustive_identity_at_gamma_1(self):
        mdp = random_mdp(53, 2, 2, 2, gamma=1.0)
        ref = random_policy(54, mdp)
        worst = 0.0
        for c in range(2):
            trajs = list(all_trajectories(mdp, c))
            for x1 in trajs:
                for x2 in trajs:
                    worst = max(worst, verify_offset(mdp, ref, 1.0, x1, x2).abs_error)
        assert worst < 1e-8

    def test_gamma_not_one_guard(self):
        mdp = random_mdp(55, 1, 2, 2, gamma=0.9)
        ref = random_policy(56, mdp)
        x1, x2 = Trajectory(0, (0, 0)), Trajectory(0, (1, 1))
        with pytest.raises(GammaNotOne):
            verify_offset(mdp, ref, 1.0, x1, x2)
        # the diagnostic path computes the same quantities without asserting
        rep = offset_gamma_diagnostic(mdp, ref, 1.0, x1, x2)
        assert np.isfinite(rep.abs_error)


class TestSuites:
    def test_all_suites_pass_and_report_shape(self):
        results = run_suites(["improvement", "bt", "optimal", "offset"], seed=2024)
        assert all(r.passed for r in results)
        for r in results:
            d = r.to_dict()
            assert {"name", "passed", "tolerance", "seed", "mdp_dims"} <= set(d)

    def test_unknown_suite_rejected(self):
        with pytest.raises(ValueError):
            run_suites(["nope"], seed=0)
