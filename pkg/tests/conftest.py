import numpy as np
import pytest

from drlope import TabularMDPSpec, TabularPolicy


def deterministic_policy(action: int, n_states: int, n_actions: int) -> TabularPolicy:
    table = np.zeros((n_states, n_actions))
    table[:, action] = 1.0
    return TabularPolicy(table)


def constant_eta_chain(horizon: int, seed: int = 0):
    """2-state chain where the realized per-step ratio is 1.5 or 0.

    Behavior puts mass 2/3 on action 0 everywhere; the target always takes
    action 0, so eta(a=0) = 1.5 and trajectories that ever take action 1
    carry weight 0.  Rewards are noisy so conditional variances are nonzero.
    Returns (spec, behavior, target).
    """
    rng = np.random.default_rng(seed)

    def rows(*shape):
        x = rng.uniform(0.1, 1.0, size=shape)
        return x / x.sum(axis=-1, keepdims=True)

    spec = TabularMDPSpec(
        horizon=horizon,
        initial=np.array([0.5, 0.5]),
        transitions=rows(2, 2, 2),
        reward_values=np.array([0.0, 1.0]),
        reward_probs=rows(2, 2, 2),
    )
    behavior = TabularPolicy(np.full((2, 2), [2.0 / 3.0, 1.0 / 3.0]))
    target = deterministic_policy(0, 2, 2)
    return spec, behavior, target


@pytest.fixture
def small_spec():
    return TabularMDPSpec.random(seed=7)
