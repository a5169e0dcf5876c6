"""Policy-value estimators: weighting, direct, and doubly robust variants."""
import numpy as np
import pytest

from conftest import deterministic_policy
from drlope import (
    Dataset,
    FoldLeakage,
    SpaceSpec,
    TabularMDPSpec,
    TabularOneHotFeatures,
    TabularPolicy,
    Trajectory,
    UniformPolicy,
    dm_estimate,
    dp_q,
    dr_adaptive_m1,
    dr_adaptive_m2,
    drl_m1,
    drl_m2,
    eif_m1_values,
    eif_m2_values,
    exact_mu,
    effbound_pair,
    fit_mu_ls,
    fit_q_backward,
    fit_w_histogram,
    is_estimate,
    lambda_matrix,
    mis_estimate,
    simulate,
)
from drlope.estimators import NuisanceSet, OracleQ, ZeroQ, dr_values
from drlope.core import assign_folds
from drlope.nuisance import HistogramWRatio, KnownLambdaRatio, LeastSquaresMuRatio


def random_policy(seed, n_states, n_actions):
    rng = np.random.default_rng(seed)
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))


class ExactMuRatio:
    """Oracle marginal-ratio weights from a dense (T+1, S, A) table."""

    def __init__(self, mu_table):
        self.mu_table = np.asarray(mu_table, dtype=float)

    def weights(self, data):
        out = np.empty((data.n, data.horizon + 1))
        for t in range(data.horizon + 1):
            out[:, t] = self.mu_table[t][data.states_at(t), data.actions[:, t]]
        return out


def tabular_setup(seed_spec=7, seed_b=40, seed_t=41, n=2000, seed_data=42):
    spec = TabularMDPSpec.random(seed=seed_spec)
    behavior = random_policy(seed_b, spec.n_states, spec.n_actions)
    target = random_policy(seed_t, spec.n_states, spec.n_actions)
    data = simulate(spec, behavior, n, seed=seed_data)
    return spec, behavior, target, data


class TestImportanceSampling:
    def test_hand_arithmetic(self):
        # two trajectories with known cumulative ratios: behavior uniform,
        # target deterministic action 0. lambda = [2, 4] when both actions
        # are 0, and [0, 0] once action 1 appears.
        space = SpaceSpec(horizon=1, n_actions=2, n_states=1)
        trajs = [
            Trajectory([0, 0], [0, 0], [1.0, 1.0]),
            Trajectory([0, 0], [1, 0], [1.0, 1.0]),
        ]
        data = Dataset.from_trajectories(space, trajs)
        est = is_estimate(data, UniformPolicy(2), deterministic_policy(0, 1, 2))
        # trajectory 1 contributes 2*1 + 4*1 = 6, trajectory 2 contributes 0
        assert est.rho_hat == pytest.approx(3.0, abs=1e-12)

    def test_on_policy_is_mean_return(self, small_spec):
        pi = random_policy(43, 3, 2)
        data = simulate(small_spec, pi, 500, seed=44)
        est = is_estimate(data, pi, pi)
        assert est.rho_hat == pytest.approx(data.rewards.sum(axis=1).mean(), abs=1e-12)

    def test_unbiased_against_dp_truth(self):
        spec, behavior, target, data = tabular_setup(n=20_000)
        truth = dp_q(spec, target).rho
        est = is_estimate(data, behavior, target)
        assert abs(est.rho_hat - truth) <= 4 * est.std_error

    def test_alternative_form_same_mean_higher_variance(self):
        spec, behavior, target, data = tabular_setup(n=50_000)
        plain = is_estimate(data, behavior, target)
        alt = is_estimate(data, behavior, target, alternative=True)
        truth = dp_q(spec, target).rho
        assert abs(alt.rho_hat - truth) <= 4 * alt.std_error
        assert alt.std_error > plain.std_error


class TestDirectMethod:
    def test_constant_q_model(self):
        space = SpaceSpec(horizon=1, n_actions=2, n_states=2)
        data = Dataset(
            space, np.zeros((10, 2), int), np.zeros((10, 2), int), np.zeros((10, 2))
        )
        q = OracleQ(np.full((2, 2, 2), 2.5))
        est = dm_estimate(data, q, UniformPolicy(2))
        assert est.rho_hat == pytest.approx(2.5, abs=1e-12)
        assert est.std_error == pytest.approx(0.0, abs=1e-12)

    def test_oracle_q_recovers_truth(self):
        spec, behavior, target, data = tabular_setup(n=5000)
        res = dp_q(spec, target)
        est = dm_estimate(data, OracleQ(res.q), target)
        # only initial-state sampling noise remains
        assert abs(est.rho_hat - res.rho) <= 4 * est.std_error

    def test_fitted_q_on_tabular_recovers_truth(self):
        spec, behavior, target, data = tabular_setup(n=20_000)
        q = fit_q_backward(data, target, TabularOneHotFeatures(3, 2))
        est = dm_estimate(data, q, target)
        truth = dp_q(spec, target).rho
        assert abs(est.rho_hat - truth) <= 0.02


class TestMIS:
    def test_known_lambda_ratio_equals_is(self, small_spec):
        behavior = random_policy(45, 3, 2)
        target = random_policy(46, 3, 2)
        data = simulate(small_spec, behavior, 300, seed=47)
        est = mis_estimate(data, KnownLambdaRatio(behavior, target))
        ref = is_estimate(data, behavior, target)
        assert est.rho_hat == pytest.approx(ref.rho_hat, abs=1e-12)

    def test_on_policy_histogram_is_mean_return(self, small_spec):
        pi = random_policy(48, 3, 2)
        data = simulate(small_spec, pi, 400, seed=49)
        est = mis_estimate(data, fit_w_histogram(data, pi, pi))
        assert est.rho_hat == pytest.approx(data.rewards.sum(axis=1).mean(), abs=1e-12)

    def test_oracle_mu_unbiased(self):
        spec, behavior, target, data = tabular_setup(n=20_000)
        mu = exact_mu(spec, behavior, target)
        est = mis_estimate(data, ExactMuRatio(mu))
        truth = dp_q(spec, target).rho
        assert abs(est.rho_hat - truth) <= 4 * est.std_error

    def test_histogram_self_fit_converges(self):
        spec, behavior, target, _ = tabular_setup()
        truth = dp_q(spec, target).rho
        errs = []
        for n in (500, 8000):
            vals = []
            for rep in range(20):
                data = simulate(spec, behavior, n, seed=1000 + 17 * n + rep)
                est = mis_estimate(data, fit_w_histogram(data, behavior, target))
                vals.append(est.rho_hat - truth)
            errs.append(np.sqrt(np.mean(np.square(vals))))
        # 16x more data: RMSE should drop by roughly 4; accept anything > 2
        assert errs[1] < errs[0] / 2


class TestDoublyRobust:
    def test_zero_q_known_lambda_equals_is_exactly(self, small_spec):
        behavior = random_policy(50, 3, 2)
        target = random_policy(51, 3, 2)
        data = simulate(small_spec, behavior, 200, seed=52)
        lam = KnownLambdaRatio(behavior, target).weights(data)
        vals = dr_values(data, target, ZeroQ(), lam)
        ref = (lambda_matrix(data, behavior, target) * data.rewards).sum(axis=1)
        assert np.allclose(vals, ref, atol=1e-12)
        est = dr_adaptive_m1(data, behavior, target, ZeroQ())
        assert est.rho_hat == pytest.approx(is_estimate(data, behavior, target).rho_hat, abs=1e-12)

    def test_oracle_nuisances_match_influence_function(self):
        # with exact q and exact weights the per-trajectory values equal
        # rho + influence-function contribution, for both weight choices
        spec, behavior, target, data = tabular_setup(n=300)
        res = dp_q(spec, target)
        lamw = KnownLambdaRatio(behavior, target).weights(data)
        vals1 = dr_values(data, target, OracleQ(res.q), lamw)
        ref1 = res.rho + eif_m1_values(data, behavior, target, res.q, res.rho)
        assert np.allclose(vals1, ref1, atol=1e-10)
        mu = exact_mu(spec, behavior, target)
        vals2 = dr_values(data, target, OracleQ(res.q), ExactMuRatio(mu).weights(data))
        ref2 = res.rho + eif_m2_values(data, behavior, target, res.q, mu, res.rho)
        assert np.allclose(vals2, ref2, atol=1e-10)

    def test_on_policy_oracle_q_telescopes_to_v0(self, small_spec):
        pi = random_policy(53, 3, 2)
        data = simulate(small_spec, pi, 100, seed=54)
        res = dp_q(small_spec, pi)
        ones = np.ones((data.n, data.horizon + 1))
        vals = dr_values(data, pi, OracleQ(res.q), ones)
        # sum_t [(r_t - q_t) + v_t] collapses to v_0(s_0) plus the martingale
        # residuals; with deterministic rewards equal to their mean and exact
        # q it equals v_0(s_0) in expectation -- here check the algebraic
        # telescoping identity directly
        v0 = res.v[0][data.states_at(0)]
        resid = vals - v0
        # residuals are mean-zero differences r_t - E[r] and v_{t+1} - E[v']
        assert abs(resid.mean()) <= 4 * resid.std(ddof=1) / np.sqrt(data.n) + 1e-12

    def test_oracle_nuisance_variance_near_bounds(self):
        # mix with uniform to bound the per-step ratios; raw random policies
        # make the sampled variance too heavy-tailed to compare at this n
        spec = TabularMDPSpec.random(seed=7)

        def mixed(seed):
            rng = np.random.default_rng(seed)
            return TabularPolicy(0.5 * rng.dirichlet(np.ones(2), size=3) + 0.25)

        behavior, target = mixed(40), mixed(41)
        res = dp_q(spec, target)
        mu = exact_mu(spec, behavior, target)
        data = simulate(spec, behavior, 200_000, seed=55)
        lamw = KnownLambdaRatio(behavior, target).weights(data)
        v1 = dr_values(data, target, OracleQ(res.q), lamw).var(ddof=1)
        v2 = dr_values(data, target, OracleQ(res.q), ExactMuRatio(mu).weights(data)).var(ddof=1)
        b1, b2, _ = effbound_pair(spec, behavior, target, n_mc=200_000, seed=56)
        assert v1 == pytest.approx(b1.value, rel=0.05)
        assert v2 == pytest.approx(b2.value, rel=0.05)

    def test_cross_fitted_recovers_truth_tabular(self):
        spec, behavior, target, data = tabular_setup(n=10_000)
        truth = dp_q(spec, target).rho
        q_fitter = lambda train: fit_q_backward(train, target, TabularOneHotFeatures(3, 2))
        est1 = drl_m1(data, behavior, target, q_fitter)
        assert abs(est1.rho_hat - truth) <= 4 * est1.std_error + 0.01
        mu_fitter = lambda train: fit_mu_ls(
            train, behavior, target, TabularOneHotFeatures(3, 2)
        )
        est2 = drl_m2(data, behavior, target, q_fitter, mu_fitter)
        assert abs(est2.rho_hat - truth) <= 4 * est2.std_error + 0.01

    def test_adaptive_equals_cross_fit_formula_with_shared_nuisances(self, small_spec):
        behavior = random_policy(57, 3, 2)
        target = random_policy(58, 3, 2)
        data = simulate(small_spec, behavior, 400, seed=59)
        q = fit_q_backward(data, target, TabularOneHotFeatures(3, 2))
        mu = fit_mu_ls(data, behavior, target, TabularOneHotFeatures(3, 2))
        est = dr_adaptive_m2(data, target, q, mu)
        ref = dr_values(data, target, q, mu.weights(data)).mean()
        assert est.rho_hat == pytest.approx(ref, abs=1e-12)

    def test_estimate_names(self, small_spec):
        behavior = random_policy(60, 3, 2)
        target = random_policy(61, 3, 2)
        data = simulate(small_spec, behavior, 100, seed=62)
        q_fitter = lambda train: fit_q_backward(
            train, target, TabularOneHotFeatures(3, 2)
        )
        assert drl_m1(data, behavior, target, q_fitter).estimator_name == "drl_m1"
        assert dr_adaptive_m1(data, behavior, target, ZeroQ()).estimator_name == "dr_adaptive_m1"
        assert is_estimate(data, behavior, target).estimator_name == "is"


class TestFoldHygiene:
    def test_leakage_detected(self, small_spec):
        behavior = random_policy(63, 3, 2)
        target = random_policy(64, 3, 2)
        data = simulate(small_spec, behavior, 60, seed=65)
        folds = assign_folds(data.n, 2, seed=0)
        q = fit_q_backward(data, target, TabularOneHotFeatures(3, 2))
        ratio = fit_w_histogram(data, behavior, target)
        # both folds' models trained on ALL trajectories -> leakage
        bad = NuisanceSet(folds, [q, q], [ratio, ratio], [np.arange(data.n)] * 2)
        with pytest.raises(FoldLeakage):
            bad.check_no_leakage()

    def test_fit_produces_disjoint_training_sets(self, small_spec):
        behavior = random_policy(66, 3, 2)
        target = random_policy(67, 3, 2)
        data = simulate(small_spec, behavior, 80, seed=68)
        folds = assign_folds(data.n, 2, seed=1)
        nuis = NuisanceSet.fit(
            data,
            folds,
            lambda tr: fit_q_backward(tr, target, TabularOneHotFeatures(3, 2)),
            lambda tr: fit_w_histogram(tr, behavior, target),
        )
        nuis.check_no_leakage()
        for j in (1, 2):
            assert (
                np.intersect1d(nuis.train_indices[j - 1], folds.fold_indices(j)).size == 0
            )
