"""Off-policy evaluation for finite-horizon decision processes.

Doubly robust, cross-fitted policy-value estimation with importance
sampling, direct, and marginalized-ratio baselines, plus oracle machinery
(exact dynamic programming, influence functions, efficiency bounds) and a
config-driven Monte Carlo benchmark harness.
"""

from .core import (
    Dataset,
    FoldAssignment,
    PolicyValueEstimate,
    SpaceSpec,
    Trajectory,
    assign_folds,
    eta,
    eta_matrix,
    lambda_matrix,
    lambda_path,
    v_from_q,
)
from .envs import (
    CliffWalkEnv,
    MountainCarEnv,
    QLearnConfig,
    SyntheticGaussianMDP,
    env_by_name,
    simulate,
    train_q_learning,
)
from .errors import (
    BoundViolated,
    ConfigError,
    DrlopeError,
    FoldLeakage,
    InfiniteStateSpace,
    InvalidFoldCount,
    NonpositiveBandwidth,
    OverlapViolation,
    SingularDesign,
    TrainingDiverged,
)
from .estimators import (
    NuisanceSet,
    OracleQ,
    dm_estimate,
    dr_adaptive_m1,
    dr_adaptive_m2,
    drl_m1,
    drl_m2,
    is_estimate,
    mis_estimate,
)
from .features import (
    InterceptFeatures,
    LinearInteractionFeatures,
    QuadraticInteractionFeatures,
    RandomFourierFeatures,
    TabularOneHotFeatures,
)
from .nuisance import (
    HistogramWRatio,
    KernelWRatio,
    KnownLambdaRatio,
    LeastSquaresMuRatio,
    LinearQModel,
    fit_mu_ls,
    fit_q_backward,
    fit_w_histogram,
    fit_w_kernel,
    mu_from_w,
    select_bandwidth,
)
from .oracle import (
    MCBound,
    TabularMDPSpec,
    approx_q_rollouts,
    dp_q,
    effbound_mc,
    effbound_pair,
    eif_m1,
    eif_m1_values,
    eif_m2,
    eif_m2_values,
    exact_mu,
    exact_w,
    horizon_bound_check,
    mis_gap_mc,
    mis_influence_values,
    state_marginals,
)
from .policies import (
    GreedyFromQPolicy,
    LogisticBernoulliPolicy,
    MixturePolicy,
    Policy,
    TabularPolicy,
    UniformPolicy,
    mixture_policy,
    policy_from_config,
)
from .bench import (
    ExperimentConfig,
    ResultRow,
    emit_csv,
    parse_csv,
    run_experiment,
    train_pid,
    true_value,
)
from .estimators import ESTIMATOR_NAMES

__version__ = "0.1.0"
