"""Command-line harness.

Subcommands: simulate (emit a dataset as JSONL), evaluate (one estimator on
one dataset), bench (full experiment -> CSV), effbound (Monte Carlo
efficiency bounds for a tabular model), train-pid (build and persist the
greedy base policy).  Exit codes: 0 success, 2 configuration error, 3 when
the estimator failure budget is exceeded.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .bench import ExperimentConfig, emit_csv, run_experiment, train_pid, true_value
from .core import Dataset
from .envs import simulate
from .errors import ConfigError, DrlopeError
from .estimators import dm_estimate, drl_m1, drl_m2, is_estimate, mis_estimate
from .oracle import TabularMDPSpec, effbound_pair, mis_gap_mc
from .policies import policy_from_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("THREADS", "1"))


def _cmd_simulate(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    from .bench import _build_env, _resolve_policies

    env = _build_env(cfg)
    behavior, _ = _resolve_policies(cfg)
    n = args.n or cfg.sample_sizes[0]
    data = simulate(env, behavior, n, args.seed if args.seed is not None else cfg.seed)
    data.save_jsonl(args.out or "dataset.jsonl")
    print(f"wrote {n} trajectories to {args.out or 'dataset.jsonl'}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    from .bench import _build_env, _fitters, _resolve_policies

    env = _build_env(cfg)
    behavior, target = _resolve_policies(cfg)
    data = Dataset.load_jsonl(args.dataset)
    q_fitter, ratio_fitter, mis_fitter = _fitters(cfg, env, behavior, target)
    name = args.estimator
    seed = args.seed if args.seed is not None else cfg.seed
    if name == "is":
        est = is_estimate(data, behavior, target)
    elif name == "dm":
        est = dm_estimate(data, q_fitter(data), target)
    elif name == "mis":
        est = mis_estimate(data, mis_fitter(data))
    elif name == "drl_m1":
        est = drl_m1(data, behavior, target, q_fitter, K=cfg.folds, seed=seed)
    elif name == "drl_m2":
        est = drl_m2(data, behavior, target, q_fitter, ratio_fitter, K=cfg.folds, seed=seed)
    else:
        raise ConfigError(f"evaluate does not support estimator {name!r}")
    print(json.dumps({"estimator": name, "value": est.rho_hat, "std_error": est.std_error}))
    return EXIT_OK


def _cmd_bench(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out or cfg.out

    def progress(done, total):
        if sys.stderr.isatty():
            print(f"\r{done}/{total} replications", end="", file=sys.stderr)

    rows = run_experiment(cfg, threads=_threads(args), progress=progress)
    if sys.stderr.isatty():
        print(file=sys.stderr)
    emit_csv(rows, out)
    print(f"wrote {len(rows)} rows to {out}")
    budget = cfg.max_failure_fraction * cfg.replications
    if any(row.failures > budget for row in rows):
        print("estimator failure budget exceeded", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_effbound(args) -> int:
    spec = TabularMDPSpec.from_json(args.spec)
    behavior = policy_from_config(json.loads(open(args.behavior).read()))
    target = policy_from_config(json.loads(open(args.target).read()))
    seed = args.seed if args.seed is not None else 0
    b1, b2, diff_se = effbound_pair(spec, behavior, target, args.n_mc, seed)
    gap = mis_gap_mc(spec, behavior, target, args.n_mc, seed)
    doc = {
        "effbound_m1": b1.value,
        "effbound_m1_se": b1.std_error,
        "effbound_m2": b2.value,
        "effbound_m2_se": b2.std_error,
        "ordering_gap": b1.value - b2.value,
        "ordering_gap_se": diff_se,
        "mis_gap": gap.value,
        "mis_gap_se": gap.std_error,
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_train_pid(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    _, path = train_pid(cfg, args.out)
    print(f"wrote policy to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drlope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="TOML or JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--threads", type=int, default=None, help="worker processes (env: THREADS)")
        p.add_argument("--out", default=None, help="output path")

    p = sub.add_parser("simulate", help="simulate behavior-policy trajectories to JSONL")
    common(p)
    p.add_argument("--n", type=int, default=None, help="number of trajectories")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("evaluate", help="run one estimator on a stored dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--estimator", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("bench", help="run a full experiment and write CSV")
    common(p)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("effbound", help="Monte Carlo efficiency bounds for a tabular model")
    common(p, config=False)
    p.add_argument("--spec", required=True, help="tabular model JSON")
    p.add_argument("--behavior", required=True, help="behavior policy JSON")
    p.add_argument("--target", required=True, help="target policy JSON")
    p.add_argument("--n-mc", type=int, default=100_000)
    p.set_defaults(fn=_cmd_effbound)

    p = sub.add_parser("train-pid", help="train the greedy base policy and save it")
    common(p)
    p.set_defaults(fn=_cmd_train_pid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DrlopeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
