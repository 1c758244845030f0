"""Command-line entry point.

Subcommands:
  run-grid         sweep the (bias, variance) annotation grid and export rows
  delta            estimator-selection gap analysis against the ideal baseline
  verify-theorems  run the closed-form vs Monte-Carlo agreement suite
  list-envs        show the available benchmark environments
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import oracle
from .annotations import AnnotationModel, WeightScheme
from .core import EvaluationProblem, policy_value_exact
from .environments import ENV_KINDS, build_env, policy_suite
from .errors import ConfigError
from .estimators import EstimatorId
from .harness import ExperimentConfig, default_config, delta_analysis, export, run_grid
from .rewards import RewardModel

_ENV_BLURBS = {
    "two-context": "two contexts, two actions; reward only in the first context",
    "heartsteps": "80-bin square-root step-count simulator, intervention vs none",
    "sepsis": "1442-context vitals/treatment simulator with 8 treatment combos",
}


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        config = ExperimentConfig.from_dict(raw)
    elif args.env is not None:
        config = default_config(args.env)
    else:
        raise ConfigError("provide --config or --env")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    return replace(config, **overrides) if overrides else config


def _cmd_run_grid(args: argparse.Namespace) -> int:
    config = _load_config(args)
    result = run_grid(config)
    out = Path(args.out or f"{config.env}-grid.{args.format}")
    export(result, args.format, out)
    print(f"wrote {len(result.rows)} rows to {out}")
    return 0


def _cmd_delta(args: argparse.Namespace) -> int:
    config = _load_config(args)
    result = delta_analysis(config)
    out = Path(args.out or f"{config.env}-delta.{args.format}")
    export(result, args.format, out)
    print(f"wrote {len(result.rows)} rows to {out}")
    return 0


def _cmd_list_envs(_: argparse.Namespace) -> int:
    for kind in ENV_KINDS:
        print(f"{kind:12s} {_ENV_BLURBS[kind]}")
    return 0


def _report(name: str, ok: bool, detail: str) -> bool:
    print(f"[{'ok' if ok else 'FAIL'}] {name}: {detail}")
    return ok


def _cmd_verify_theorems(args: argparse.Namespace) -> int:
    """Closed-form vs Monte-Carlo agreement checks at reduced trial counts."""
    seed = args.seed if args.seed is not None else 0
    trials = args.trials if args.trials is not None else 4000
    config = default_config(
        "two-context", seed=seed, trials=2, eps_grid=(0.0,), delta_grid=(0.0,)
    )
    env = build_env("two-context")
    suite = policy_suite("two-context", env.n_contexts)
    pair_index = 1  # uniform logging policy against a tilted target
    pi_b, pi_e = suite.pairs[pair_index]
    problem = EvaluationProblem(env, pi_b, pi_e)
    truth = policy_value_exact(env, pi_e)
    ok = True

    # Equal-weights equivalence of the three augmented estimators.
    from .annotations import annotate, assign_weights, augmented_behavior_policy
    from .core import sample_dataset
    from .estimators import estimate_dm_is_plus, estimate_dm_plus_is_plus, estimate_is_plus

    model_ann = AnnotationModel.constant(env)
    scheme = WeightScheme.equal(model_ann, with_covariance=True)
    pib_plus = augmented_behavior_policy(pi_b, scheme)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(20):
        d = sample_dataset(problem, 50, seed * 1000 + k)
        aug = assign_weights(annotate(d, env, model_ann, seed * 1000 + k + 1), scheme)
        r_hat = RewardModel.from_table(rng.normal(size=(2, 2)))
        base = estimate_is_plus(aug, pi_e, pib_plus).value
        worst = max(
            worst,
            abs(base - estimate_dm_is_plus(aug, r_hat, pi_e, pib_plus).value),
            abs(base - estimate_dm_plus_is_plus(aug, r_hat, pi_e, pib_plus).value),
        )
    ok &= _report("equal-weights equivalence", worst <= 1e-10, f"max gap {worst:.2e}")

    # Unbiasedness of the robust DR variant under biased annotations.
    biased = replace(config, availability=1.0)
    moments = oracle.empirical_moments(
        EstimatorId.DM_PLUS_IS, biased, trials, seed, cell=(0.5, 0.0), pair_index=pair_index
    )
    gap = abs(moments.mean - truth)
    ok &= _report(
        "robust-DR unbiasedness under biased annotations",
        gap <= 3 * moments.se_mean + 1e-12,
        f"|mean - truth| = {gap:.4f} vs 3 SE = {3 * moments.se_mean:.4f}",
    )

    # Bias closed form for the augmented-correction estimators.
    ann_biased = AnnotationModel.constant(env, bias=0.5)
    predicted = oracle.dm_is_plus_bias(problem, scheme, ann_biased)
    moments = oracle.empirical_moments(
        EstimatorId.DM_IS_PLUS, biased, trials, seed + 1, cell=(0.5, 0.0), pair_index=pair_index
    )
    gap = abs(moments.mean - truth - predicted)
    ok &= _report(
        "bias closed form for augmented corrections",
        gap <= 3 * moments.se_mean + 1e-12,
        f"|bias - predicted| = {gap:.4f} vs 3 SE = {3 * moments.se_mean:.4f}",
    )

    # Importance-sampling variance closed form.
    moments = oracle.empirical_moments(
        EstimatorId.IS, config, trials, seed + 2, cell=(0.0, 0.0), pair_index=pair_index
    )
    predicted_var = oracle.is_variance(problem).total / config.n
    rel = abs(moments.variance - predicted_var) / predicted_var
    ok &= _report(
        "importance-sampling variance closed form",
        rel <= 0.1,
        f"relative gap {rel:.3f} at {trials} trials",
    )

    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfope",
        description="Off-policy evaluation with counterfactual annotations: "
        "estimators, closed-form oracles, and the benchmark grid harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON experiment config file")
        p.add_argument("--env", choices=ENV_KINDS, help="environment kind (built-in defaults)")
        p.add_argument("--seed", type=int, help="root seed override")
        p.add_argument("--trials", type=int, help="trials-per-cell override")
        p.add_argument("--out", help="output file path")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    grid = sub.add_parser("run-grid", help="run the annotation bias/variance grid")
    common(grid)
    grid.add_argument("--workers", type=int, help="parallel trial workers")
    grid.set_defaults(func=_cmd_run_grid)

    delta = sub.add_parser("delta", help="estimator-selection gap analysis")
    common(delta)
    delta.set_defaults(func=_cmd_delta)

    verify = sub.add_parser("verify-theorems", help="closed-form vs Monte-Carlo agreement suite")
    verify.add_argument("--seed", type=int, help="root seed")
    verify.add_argument("--trials", type=int, help="Monte-Carlo trials per check")
    verify.set_defaults(func=_cmd_verify_theorems)

    envs = sub.add_parser("list-envs", help="list available environments")
    envs.set_defaults(func=_cmd_list_envs)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
