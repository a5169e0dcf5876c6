"""Data model, density ratios, folds, and policy primitives."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drlope import (
    Dataset,
    FoldAssignment,
    InvalidFoldCount,
    LogisticBernoulliPolicy,
    MixturePolicy,
    OverlapViolation,
    PolicyValueEstimate,
    SpaceSpec,
    TabularPolicy,
    Trajectory,
    UniformPolicy,
    assign_folds,
    eta,
    eta_matrix,
    lambda_matrix,
    lambda_path,
    mixture_policy,
    policy_from_config,
    v_from_q,
)


def det_policy(action: int, n_actions: int = 2, n_states: int = 2) -> TabularPolicy:
    table = np.zeros((n_states, n_actions))
    table[:, action] = 1.0
    return TabularPolicy(table)


# ---------------------------------------------------------------- eta


class TestEta:
    def test_identical_policies_give_one(self):
        pi = TabularPolicy([[0.3, 0.7], [0.5, 0.5]])
        for t in range(3):
            for s in range(2):
                for a in range(2):
                    assert eta(pi, pi, t, s, a) == 1.0

    def test_uniform_behavior_deterministic_target(self):
        behavior = UniformPolicy(2)
        target = det_policy(0)
        assert eta(behavior, target, 0, 0, 0) == 2.0

    def test_logistic_pair_hand_arithmetic(self):
        # At s = 0.5 the two logistic response curves evaluate to
        # 0.2/(1+e^-0.05)+0.1 and 0.9/(1+e^-0.05)+0.05; the ratio for a=1
        # is their quotient.
        target = LogisticBernoulliPolicy(0.2, 0.1, 0.1)
        behavior = LogisticBernoulliPolicy(0.9, 0.1, 0.05)
        pe = 0.2 / (1.0 + np.exp(-0.05)) + 0.1
        pb = 0.9 / (1.0 + np.exp(-0.05)) + 0.05
        assert eta(behavior, target, 0, 0.5, 1) == pytest.approx(pe / pb, rel=1e-12)

    def test_zero_behavior_mass_raises(self):
        behavior = det_policy(0)
        target = UniformPolicy(2)
        with pytest.raises(OverlapViolation):
            eta(behavior, target, 0, 0, 1)

    def test_zero_over_zero_is_zero(self):
        behavior = det_policy(0)
        target = det_policy(0)
        assert eta(behavior, target, 0, 0, 1) == 0.0


# ---------------------------------------------------------------- lambda


class TestLambdaPath:
    def test_on_policy_all_ones(self):
        pi = TabularPolicy([[0.4, 0.6], [0.9, 0.1]])
        traj = Trajectory([0, 1, 0, 1], [1, 0, 0, 1], [0.0] * 4)
        assert lambda_path(traj, pi, pi) == [1.0] * 4

    def test_constant_eta_two_is_geometric(self):
        behavior = TabularPolicy([[0.5, 0.5]])
        target = det_policy(0, n_states=1)
        traj = Trajectory([0, 0, 0, 0], [0, 0, 0, 0], [0.0] * 4)
        assert lambda_path(traj, behavior, target) == [2.0, 4.0, 8.0, 16.0]

    def test_final_lambda_matches_independent_product(self):
        rng = np.random.default_rng(5)
        behavior = TabularPolicy(rng.dirichlet(np.ones(3), size=4))
        target = TabularPolicy(rng.dirichlet(np.ones(3), size=4))
        traj = Trajectory(
            rng.integers(0, 4, 6).tolist(), rng.integers(0, 3, 6).tolist(), [0.0] * 6
        )
        path = lambda_path(traj, behavior, target)
        direct = 1.0
        for t, (s, a) in enumerate(zip(traj.states, traj.actions)):
            direct *= target.prob(t, s, a) / behavior.prob(t, s, a)
        assert path[-1] == pytest.approx(direct, rel=1e-12)

    def test_matrix_agrees_with_per_trajectory_path(self):
        rng = np.random.default_rng(6)
        space = SpaceSpec(horizon=4, n_actions=2, n_states=3)
        behavior = TabularPolicy(rng.dirichlet(np.ones(2), size=3))
        target = TabularPolicy(rng.dirichlet(np.ones(2), size=3))
        data = Dataset(
            space,
            rng.integers(0, 3, (8, 5)),
            rng.integers(0, 2, (8, 5)),
            rng.normal(size=(8, 5)),
        )
        lam = lambda_matrix(data, behavior, target)
        for i in range(data.n):
            assert lam[i].tolist() == pytest.approx(
                lambda_path(data.trajectory(i), behavior, target), rel=1e-12
            )

    def test_eta_matrix_overlap_violation(self):
        space = SpaceSpec(horizon=0, n_actions=2, n_states=1)
        data = Dataset(space, np.zeros((1, 1), int), np.ones((1, 1), int), np.zeros((1, 1)))
        with pytest.raises(OverlapViolation):
            eta_matrix(data, det_policy(0, n_states=1), UniformPolicy(2))


# ---------------------------------------------------------------- folds


class TestFolds:
    def test_identity_permutation_blocks(self):
        fa = FoldAssignment(n=4, K=2, permutation=np.arange(4))
        assert fa.fold_of.tolist() == [1, 1, 2, 2]

    def test_every_fold_singleton(self):
        fa = assign_folds(5, 5, seed=0)
        assert sorted(fa.fold_of.tolist()) == [1, 2, 3, 4, 5]

    def test_n7_k3_sizes(self):
        fa = assign_folds(7, 3, seed=1)
        sizes = sorted(len(fa.fold_indices(j)) for j in (1, 2, 3))
        assert sizes == [2, 2, 3]

    def test_invalid_counts(self):
        with pytest.raises(InvalidFoldCount):
            assign_folds(3, 1, seed=0)
        with pytest.raises(InvalidFoldCount):
            assign_folds(3, 4, seed=0)

    @given(st.integers(2, 60), st.integers(2, 8), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_partition_and_balance(self, n, K, seed):
        if K > n:
            K = n
        fa = assign_folds(n, K, seed)
        sizes = [len(fa.fold_indices(j)) for j in range(1, K + 1)]
        assert sum(sizes) == n
        assert max(sizes) - min(sizes) <= 1
        for j in range(1, K + 1):
            merged = np.sort(np.concatenate([fa.fold_indices(j), fa.complement_indices(j)]))
            assert merged.tolist() == list(range(n))


# ---------------------------------------------------------------- v_from_q


class TestVFromQ:
    def test_deterministic_target_picks_q_at_action(self):
        q = lambda t, s, a: 10.0 * a + s
        assert v_from_q(q, det_policy(1), 0, 1) == 11.0

    def test_uniform_two_actions_is_mean(self):
        q = lambda t, s, a: [1.0, 3.0][a]
        assert v_from_q(q, UniformPolicy(2), 0, 0) == 2.0

    def test_matches_brute_force_dot_product(self):
        rng = np.random.default_rng(7)
        table = rng.dirichlet(np.ones(4), size=3)
        pi = TabularPolicy(table)
        qvals = rng.normal(size=(3, 4))
        q = lambda t, s, a: qvals[s, a]
        for s in range(3):
            assert v_from_q(q, pi, 0, s) == pytest.approx(table[s] @ qvals[s], rel=1e-12)


# ---------------------------------------------------------------- policies


class TestPolicies:
    @given(st.integers(0, 2**31), st.integers(1, 5), st.integers(2, 4))
    @settings(max_examples=40, deadline=None)
    def test_tabular_rows_normalized(self, seed, n_states, n_actions):
        rng = np.random.default_rng(seed)
        pi = TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))
        probs = pi.action_probs(0, np.arange(n_states))
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    @given(st.floats(-50, 50), st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_logistic_mass_normalized(self, s, alpha):
        base = LogisticBernoulliPolicy(0.9, 0.1, 0.05)
        pi = MixturePolicy(base, alpha)
        probs = pi.action_probs(0, np.array([s]))
        assert np.all(probs >= 0)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_logistic_batch_shapes(self):
        pi = LogisticBernoulliPolicy(0.2, 0.1, 0.1)
        flat = pi.action_probs(0, np.zeros(5))
        col = pi.action_probs(0, np.zeros((5, 1)))
        assert flat.shape == col.shape == (5, 2)
        assert np.allclose(flat, col)

    def test_mixture_alpha_one_is_uniform(self):
        pi = mixture_policy(det_policy(1, n_actions=4, n_states=1), 1.0)
        assert np.allclose(pi.action_probs(0, np.array([0])), 0.25)

    def test_mixture_alpha_zero_is_base(self):
        base = det_policy(1, n_actions=4, n_states=1)
        pi = mixture_policy(base, 0.0)
        assert np.allclose(
            pi.action_probs(0, np.array([0])), base.action_probs(0, np.array([0]))
        )

    def test_mixture_point_eight_masses(self):
        pi = mixture_policy(det_policy(2, n_actions=4, n_states=1), 0.8)
        probs = pi.action_probs(0, np.array([0]))[0]
        assert probs[2] == pytest.approx(0.4, abs=1e-12)
        assert probs[0] == probs[1] == probs[3] == pytest.approx(0.2, abs=1e-12)

    def test_config_round_trip(self):
        base = LogisticBernoulliPolicy(0.9, 0.1, 0.05)
        for pi in (base, MixturePolicy(base, 0.3), UniformPolicy(3),
                   TabularPolicy([[0.25, 0.75]])):
            clone = policy_from_config(pi.to_config())
            s = np.array([0.0]) if not isinstance(pi, TabularPolicy) else np.array([0])
            assert np.allclose(clone.action_probs(0, s), pi.action_probs(0, s))

    def test_sampling_matches_masses(self):
        rng = np.random.default_rng(11)
        pi = TabularPolicy([[0.2, 0.8]])
        draws = pi.sample_actions(0, np.zeros(20000, dtype=int), rng)
        assert draws.mean() == pytest.approx(0.8, abs=0.02)


# ---------------------------------------------------------------- dataset


class TestDataset:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        space = SpaceSpec(horizon=3, n_actions=2, state_dim=2)
        data = Dataset(
            space,
            rng.normal(size=(5, 4, 2)),
            rng.integers(0, 2, (5, 4)),
            rng.normal(size=(5, 4)),
        )
        path = tmp_path / "data.jsonl"
        data.save_jsonl(path)
        back = Dataset.load_jsonl(path)
        assert back.space == data.space
        assert np.allclose(back.states, data.states)
        assert np.array_equal(back.actions, data.actions)
        assert np.allclose(back.rewards, data.rewards)

    def test_shape_validation(self):
        space = SpaceSpec(horizon=1, n_actions=2, n_states=2)
        with pytest.raises(ValueError):
            Dataset(space, np.zeros((3, 2), int), np.zeros((3, 3), int), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            Dataset(space, np.full((3, 2), 9), np.zeros((3, 2), int), np.zeros((3, 2)))

    def test_reward_bounds_enforced(self):
        space = SpaceSpec(horizon=0, n_actions=2, n_states=1)
        with pytest.raises(ValueError):
            Dataset(
                space,
                np.zeros((1, 1), int),
                np.zeros((1, 1), int),
                np.array([[2.0]]),
                reward_bounds=(0.0, 1.0),
            )

    def test_estimate_validation(self):
        with pytest.raises(ValueError):
            PolicyValueEstimate(1.0, -0.5, 10, "is")
        with pytest.raises(ValueError):
            PolicyValueEstimate(1.0, float("nan"), 10, "is")


# ------------------------------------------------- feature fast paths


class TestRandomFourierAllActions:
    def test_dot_all_actions_matches_per_action_featurization(self):
        from drlope.features import RandomFourierFeatures

        feats = RandomFourierFeatures(
            64, [(-1.2, 0.6), (-0.07, 0.07)], n_actions=3, seed=3
        )
        rng = np.random.default_rng(0)
        states = np.column_stack(
            [rng.uniform(-1.2, 0.6, 50), rng.uniform(-0.07, 0.07, 50)]
        )
        coefs = rng.normal(size=64)
        got = feats.dot_all_actions(0, states, coefs)
        assert got.shape == (50, 3)
        for a in range(3):
            ref = feats(0, states, np.full(50, a)) @ coefs
            assert np.allclose(got[:, a], ref, atol=1e-12)

    def test_greedy_policy_uses_identical_q_values(self):
        from drlope.features import RandomFourierFeatures
        from drlope.policies import GreedyFromQPolicy

        feats = RandomFourierFeatures(32, [(0.0, 1.0)], n_actions=4, seed=9)
        rng = np.random.default_rng(1)
        coefs = rng.normal(size=32)
        pol = GreedyFromQPolicy(feats, coefs, n_actions=4)
        states = rng.uniform(0.0, 1.0, size=(40, 1))
        q = pol.q_values(0, states)
        slow = np.column_stack(
            [feats(0, states, np.full(40, a)) @ coefs for a in range(4)]
        )
        assert np.allclose(q, slow, atol=1e-12)
        probs = pol.action_probs(0, states)
        assert np.array_equal(np.argmax(probs, axis=1), np.argmax(slow, axis=1))
