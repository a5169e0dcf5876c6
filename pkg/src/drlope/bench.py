"""Config-driven Monte Carlo benchmark of the policy-value estimators.

An experiment draws `replications` datasets per sample size, runs the
configured estimators on each, and reports RMSE against a cached ground
truth.  Every replication gets its own counter-derived RNG stream, so
results are byte-identical regardless of worker count or execution order.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import assign_folds
from .envs import QLearnConfig, env_by_name, simulate, train_q_learning
from .errors import ConfigError, DrlopeError
from .estimators import (
    ESTIMATOR_NAMES,
    NuisanceSet,
    dm_estimate,
    dr_adaptive_m1,
    dr_adaptive_m2,
    drl_m1,
    drl_m2,
    is_estimate,
    mis_estimate,
)
from .features import (
    LinearInteractionFeatures,
    QuadraticInteractionFeatures,
    TabularOneHotFeatures,
)
from .nuisance import (
    KnownLambdaRatio,
    fit_mu_ls,
    fit_q_backward,
    fit_w_histogram,
    fit_w_kernel,
    select_bandwidth,
)
from .oracle import dp_q
from .policies import LogisticBernoulliPolicy, mixture_policy, policy_from_config

__all__ = ["ExperimentConfig", "ResultRow", "true_value", "run_experiment", "emit_csv"]

RESULT_COLUMNS = (
    "env",
    "setting",
    "estimator",
    "n",
    "replications",
    "rmse",
    "rmse_std_error",
    "mean_bias",
    "mean_plug_in_se",
    "failures",
)


@dataclass
class ResultRow:
    env: str
    setting: str
    estimator: str
    n: int
    replications: int
    rmse: float
    rmse_std_error: float
    mean_bias: float
    mean_plug_in_se: float
    failures: int
    wall_time: float  # informational only; excluded from the CSV artifact


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one benchmark table.

    See README for the file grammar; both TOML and JSON documents with the
    same key structure are accepted.
    """

    env: str
    setting: str = "default"
    estimators: tuple = ("is", "dm", "mis", "drl_m1", "drl_m2")
    sample_sizes: tuple = (1500,)
    replications: int = 200
    seed: int = 0
    out: str = "results.csv"
    # policies
    behavior: dict | None = None  # explicit policy config, or None to derive
    target: dict | None = None
    behavior_alpha: float = 0.8  # weight on the trained base policy (RL envs)
    target_alpha: float = 0.9  # remainder goes to the uniform policy
    pid_path: str | None = None  # serialized greedy policy; trained if absent
    # nuisances
    q_features: str | None = None  # linear | quadratic | tabular | rff
    mu_features: str | None = None
    ratio: str | None = None  # ls_mu | histogram_w | kernel_w | known_lambda
    mis_ratio: str | None = None  # ratio model for MIS; None = nonparametric default
    folds: int = 2
    ridge: float = 1e-8
    clip_bound: float | None = None
    bandwidth_candidates: tuple = (0.05, 0.1, 0.2, 0.4)
    rff_dim: int = 400
    rff_lengthscale: float = 0.35
    rff_seed: int = 0
    # q-learning for pi_d (RL envs)
    train_episodes: int = 4000
    train_learning_rate: float = 0.1
    train_epsilon: float = 0.1
    train_discount: float = 0.99
    # ground truth
    true_value_rollouts: int = 1_000_000
    true_value_seed: int = 123
    cache_dir: str = ".drlope_cache"
    max_failure_fraction: float = 0.1

    def __post_init__(self):
        if self.env not in ("synthetic", "cliff", "mountain_car"):
            raise ConfigError(f"unknown env {self.env!r}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        sizes = tuple(self.sample_sizes)
        if list(sizes) != sorted(sizes):
            raise ConfigError("sample_sizes must be ascending")
        self.sample_sizes = sizes
        self.estimators = tuple(self.estimators)
        for e in self.estimators:
            if e not in ESTIMATOR_NAMES:
                raise ConfigError(f"unknown estimator {e!r}")
        self.bandwidth_candidates = tuple(self.bandwidth_candidates)
        # Named specification settings: which nuisance model is well-specified.
        # "1" = both nuisances fine, "2" = the q-model family is wrong (the
        # ratio stays consistent via the nonparametric fit), "3" = the ratio
        # model is wrong (a parametric family that cannot represent the truth,
        # used by both MIS and the doubly-robust weights).
        nonparam = "histogram_w" if self.env == "cliff" else "kernel_w"
        presets = {
            "1": ("linear", "linear", "ls_mu", nonparam),
            "2": ("quadratic", "linear", nonparam, nonparam),
            "3": ("linear", "quadratic", "ls_mu", "ls_mu"),
        }
        if self.setting in presets:
            q_feat, mu_feat, ratio, mis = presets[self.setting]
            self.q_features, self.mu_features = q_feat, mu_feat
            if self.ratio is None:
                self.ratio = ratio
            if self.mis_ratio is None:
                self.mis_ratio = mis
        # Outside the named settings: nuisance families suited to each env
        # (exact tabular models on the gridworld, random Fourier features on
        # mountain car, linear interactions on the 1-D synthetic chain), and
        # the direct (nonparametric) state-density ratio for MIS, unless the
        # config overrides any of them.
        feat_default = {"synthetic": "linear", "cliff": "tabular", "mountain_car": "rff"}
        if self.q_features is None:
            self.q_features = feat_default[self.env]
        if self.mu_features is None:
            self.mu_features = feat_default[self.env]
        if self.ratio is None:
            # the parametric mu-regression can extrapolate arbitrarily badly
            # on a long-horizon continuous state space, so mountain car gets
            # the kernel smoother by default
            defaults = {"synthetic": "ls_mu", "cliff": "histogram_w", "mountain_car": "kernel_w"}
            self.ratio = defaults[self.env]
        if self.mis_ratio is None:
            # kernel smoothing over a horizon-200 two-dimensional state space
            # is O(n^2 * T) per replication; the parametric fit is the only
            # affordable default there
            self.mis_ratio = "ls_mu" if self.env == "mountain_car" else nonparam

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        flat = {}
        for key, value in doc.items():
            if isinstance(value, dict):
                flat.update(value)
            else:
                flat[key] = value
        valid = set(ExperimentConfig.__dataclass_fields__)
        unknown = set(flat) - valid
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "env" not in flat:
            raise ConfigError("config must name an env")
        try:
            return ExperimentConfig(**flat)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        path = Path(path)
        try:
            if path.suffix == ".json":
                doc = json.loads(path.read_text())
            else:
                with open(path, "rb") as f:
                    doc = tomllib.load(f)
        except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return ExperimentConfig.from_dict(doc)


def _build_env(cfg: ExperimentConfig):
    return env_by_name(cfg.env)


def _resolve_policies(cfg: ExperimentConfig):
    """Behavior/target policies; trains and persists pi_d for the RL envs."""
    if cfg.behavior is not None and cfg.target is not None:
        return policy_from_config(cfg.behavior), policy_from_config(cfg.target)
    if cfg.env == "synthetic":
        return (
            LogisticBernoulliPolicy(0.9, 0.1, 0.05),
            LogisticBernoulliPolicy(0.2, 0.1, 0.1),
        )
    pid = _resolve_pid(cfg)
    # MixturePolicy's parameter is the uniform weight, so alpha-on-base
    # becomes (1 - alpha)-on-uniform here
    return (
        mixture_policy(pid, 1.0 - cfg.behavior_alpha),
        mixture_policy(pid, 1.0 - cfg.target_alpha),
    )


def _qlearn_config(cfg: ExperimentConfig) -> QLearnConfig:
    return QLearnConfig(
        episodes=cfg.train_episodes,
        learning_rate=cfg.train_learning_rate,
        epsilon=cfg.train_epsilon,
        discount=cfg.train_discount,
        feature_dim=cfg.rff_dim,
        feature_lengthscale=cfg.rff_lengthscale,
        feature_seed=cfg.rff_seed,
    )


def train_pid(cfg: ExperimentConfig, path=None):
    """Train the greedy base policy and persist it as JSON."""
    env = _build_env(cfg)
    pid = train_q_learning(env, _qlearn_config(cfg), cfg.seed)
    out = Path(path or cfg.pid_path or Path(cfg.cache_dir) / f"pid_{cfg.env}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(pid.to_config()))
    return pid, out


def _resolve_pid(cfg: ExperimentConfig):
    if cfg.pid_path and Path(cfg.pid_path).exists():
        return policy_from_config(json.loads(Path(cfg.pid_path).read_text()))
    cached = Path(cfg.cache_dir) / f"pid_{cfg.env}_{_hash(_pid_key(cfg))}.json"
    if cached.exists():
        return policy_from_config(json.loads(cached.read_text()))
    pid, _ = train_pid(cfg, cached)
    return pid


def _pid_key(cfg: ExperimentConfig) -> dict:
    return {
        "env": cfg.env,
        "episodes": cfg.train_episodes,
        "lr": cfg.train_learning_rate,
        "eps": cfg.train_epsilon,
        "disc": cfg.train_discount,
        "rff": [cfg.rff_dim, cfg.rff_lengthscale, cfg.rff_seed],
        "seed": cfg.seed,
    }


def _hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def true_value(cfg: ExperimentConfig) -> float:
    """Ground-truth target-policy value: exact DP when the env is tabular,
    otherwise a large on-policy rollout mean.  Cached on disk by the hash of
    everything the value depends on (env + target policy + rollout budget).
    """
    env = _build_env(cfg)
    _, target = _resolve_policies(cfg)
    key = {
        "env": cfg.env,
        "target": target.to_config(),
        "rollouts": None if cfg.env == "cliff" else [cfg.true_value_rollouts, cfg.true_value_seed],
    }
    cache = Path(cfg.cache_dir) / f"true_{_hash(key)}.json"
    if cache.exists():
        return json.loads(cache.read_text())["value"]
    if cfg.env == "cliff":
        value = dp_q(env.as_tabular_spec(), target).rho
    else:
        total = 0.0
        remaining, chunk = cfg.true_value_rollouts, 20_000
        seed = np.random.SeedSequence(cfg.true_value_seed)
        while remaining > 0:
            m = min(chunk, remaining)
            data = simulate(env, target, m, seed.spawn(1)[0])
            total += data.rewards.sum()
            remaining -= m
        value = total / cfg.true_value_rollouts
    cache.parent.mkdir(parents=True, exist_ok=True)
    cache.write_text(json.dumps({"value": value, "key": key}))
    return value


_FEATURES = {
    "linear": lambda cfg, env: LinearInteractionFeatures(),
    "quadratic": lambda cfg, env: QuadraticInteractionFeatures(),
    "tabular": lambda cfg, env: TabularOneHotFeatures(env.space.n_states, env.space.n_actions),
    "rff": lambda cfg, env: env.feature_map(cfg.rff_dim, cfg.rff_lengthscale, cfg.rff_seed),
}


def _ratio_fitter(cfg: ExperimentConfig, kind: str, env, behavior, target):
    """Maps a ratio-model name to a fitter: training Dataset -> ratio model."""
    if kind == "known_lambda":
        return lambda train: KnownLambdaRatio(behavior, target)
    if kind == "histogram_w":
        return lambda train: fit_w_histogram(train, behavior, target, cfg.clip_bound)
    if kind == "kernel_w":

        def fit(train):
            h = select_bandwidth(train, behavior, target, cfg.bandwidth_candidates)
            return fit_w_kernel(train, behavior, target, h, cfg.clip_bound)

        return fit
    if kind == "ls_mu":
        mu_features = _FEATURES[cfg.mu_features](cfg, env)
        return lambda train: fit_mu_ls(
            train, behavior, target, mu_features, cfg.ridge, cfg.clip_bound
        )
    raise ConfigError(f"unknown ratio model {kind!r}")


def _fitters(cfg: ExperimentConfig, env, behavior, target):
    """(q_fitter, ratio_fitter, mis_fitter), each mapping a training Dataset
    to a fitted model; mis_fitter is the (typically nonparametric) ratio used
    by the marginalized importance-sampling estimator."""
    q_features = _FEATURES[cfg.q_features](cfg, env)

    def q_fitter(train):
        return fit_q_backward(train, target, q_features, cfg.ridge)

    ratio_fitter = _ratio_fitter(cfg, cfg.ratio, env, behavior, target)
    if cfg.mis_ratio == cfg.ratio:
        mis_fitter = ratio_fitter
    else:
        mis_fitter = _ratio_fitter(cfg, cfg.mis_ratio, env, behavior, target)
    return q_fitter, ratio_fitter, mis_fitter


def run_replication(cfg: ExperimentConfig, env, behavior, target, n: int, seed_seq):
    """One dataset, all configured estimators.

    Returns {estimator: (value, plug_in_se) | None-on-failure}; nuisance fits
    are shared across estimators exactly as a practitioner would share them.
    """
    data_seed, fold_seed = seed_seq.spawn(2)
    data = simulate(env, behavior, n, data_seed)
    q_fitter, ratio_fitter, mis_fitter = _fitters(cfg, env, behavior, target)
    wanted = set(cfg.estimators)
    out = {}

    def attempt(name, thunk):
        if name not in wanted:
            return
        try:
            est = thunk()
            out[name] = (est.rho_hat, est.std_error)
        except (DrlopeError, np.linalg.LinAlgError):
            out[name] = None

    attempt("is", lambda: is_estimate(data, behavior, target))

    def fit_or_none(thunk, dependents):
        if not wanted & dependents:
            return None
        try:
            return thunk()
        except (DrlopeError, np.linalg.LinAlgError):
            for name in wanted & dependents:
                out[name] = None
            return None

    full_q = fit_or_none(lambda: q_fitter(data), {"dm", "dr_adaptive_m1", "dr_adaptive_m2"})
    full_ratio = fit_or_none(lambda: ratio_fitter(data), {"dr_adaptive_m2"})
    if cfg.mis_ratio == cfg.ratio and full_ratio is not None:
        mis_model = full_ratio
    else:
        mis_model = fit_or_none(lambda: mis_fitter(data), {"mis"})
    for name, thunk in (
        ("dm", lambda: dm_estimate(data, full_q, target)),
        ("mis", lambda: mis_estimate(data, mis_model)),
        ("dr_adaptive_m1", lambda: dr_adaptive_m1(data, behavior, target, full_q)),
        ("dr_adaptive_m2", lambda: dr_adaptive_m2(data, target, full_q, full_ratio)),
    ):
        if name not in out:
            attempt(name, thunk)

    if wanted & {"drl_m1", "drl_m2"}:
        folds = assign_folds(n, cfg.folds, fold_seed)
        try:
            q_models, train_sets = [], []
            for j in range(1, folds.K + 1):
                idx = folds.complement_indices(j)
                q_models.append(q_fitter(data.subset(idx)))
                train_sets.append(idx)
        except (DrlopeError, np.linalg.LinAlgError):
            out.update({k: None for k in wanted & {"drl_m1", "drl_m2"}})
        else:
            from .estimators import _cross_fitted

            def cross(name, rfit):
                ratios = [rfit(data.subset(ix)) for ix in train_sets]
                nuis = NuisanceSet(folds, q_models, ratios, train_sets)
                return _cross_fitted(data, target, nuis, name)

            attempt("drl_m1", lambda: cross("drl_m1", lambda tr: KnownLambdaRatio(behavior, target)))
            attempt("drl_m2", lambda: cross("drl_m2", ratio_fitter))
    return out


def _task(cfg: ExperimentConfig, behavior_cfg, target_cfg, n, n_index, rep):
    env = _build_env(cfg)
    behavior = policy_from_config(behavior_cfg)
    target = policy_from_config(target_cfg)
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(n_index, rep))
    return n_index, rep, run_replication(cfg, env, behavior, target, n, ss)


def _bootstrap_rmse_se(errors: np.ndarray, seed: int, n_boot: int = 500) -> float:
    if len(errors) < 2:
        return float("nan")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(errors), size=(n_boot, len(errors)))
    return float(np.sqrt((errors[idx] ** 2).mean(axis=1)).std(ddof=1))


def run_experiment(cfg: ExperimentConfig, threads: int = 1, progress=None) -> list[ResultRow]:
    """Full benchmark: returns one ResultRow per (estimator, sample size)."""
    t0 = time.monotonic()
    rho = true_value(cfg)
    behavior, target = _resolve_policies(cfg)
    bcfg, tcfg = behavior.to_config(), target.to_config()
    tasks = [
        (cfg, bcfg, tcfg, n, ni, rep)
        for ni, n in enumerate(cfg.sample_sizes)
        for rep in range(cfg.replications)
    ]
    results = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            started = [(t[4], t[5], pool.submit(_task, *t)) for t in tasks]
            for k, (ni, rep, fut) in enumerate(started):
                results[(ni, rep)] = fut.result()[2]
                if progress:
                    progress(k + 1, len(tasks))
    else:
        for k, t in enumerate(tasks):
            ni, rep, res = _task(*t)
            results[(ni, rep)] = res
            if progress:
                progress(k + 1, len(tasks))

    rows = []
    for ni, n in enumerate(cfg.sample_sizes):
        for est in cfg.estimators:
            picks = [results[(ni, rep)].get(est) for rep in range(cfg.replications)]
            ok = [p for p in picks if p is not None]
            failures = len(picks) - len(ok)
            errors = np.array([v - rho for v, _ in ok])
            ses = np.array([se for _, se in ok])
            boot_seed = int(
                np.random.SeedSequence(cfg.seed, spawn_key=(ni, 1 << 30)).generate_state(1)[0]
            )
            rows.append(
                ResultRow(
                    env=cfg.env,
                    setting=cfg.setting,
                    estimator=est,
                    n=n,
                    replications=cfg.replications,
                    rmse=float(np.sqrt((errors**2).mean())) if len(errors) else float("nan"),
                    rmse_std_error=_bootstrap_rmse_se(errors, boot_seed),
                    mean_bias=float(errors.mean()) if len(errors) else float("nan"),
                    mean_plug_in_se=float(ses.mean()) if len(ses) else float("nan"),
                    failures=failures,
                    wall_time=time.monotonic() - t0,
                )
            )
    return rows


def _format(value) -> str:
    if isinstance(value, float):
        return "nan" if np.isnan(value) else f"{value:.6g}"
    return str(value)


def emit_csv(rows, path) -> None:
    """Write the result table: fixed column order, 6 significant digits, LF.

    Wall-clock time is deliberately not a column so that identical configs
    produce byte-identical files.
    """
    if not rows:
        raise ValueError("no result rows to write")
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(",".join(RESULT_COLUMNS) + "\n")
            for row in rows:
                rec = asdict(row)
                f.write(",".join(_format(rec[c]) for c in RESULT_COLUMNS) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def parse_csv(path) -> list[dict]:
    """Read back a results file into dicts with numeric fields restored."""
    import csv

    out = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            for k in ("rmse", "rmse_std_error", "mean_bias", "mean_plug_in_se"):
                rec[k] = float(rec[k])
            for k in ("n", "replications", "failures"):
                rec[k] = int(rec[k])
            out.append(rec)
    return out
