"""The nine off-policy value estimators.

All estimators are pure functions of their inputs and normalize by the
factual sample count N, so the annotation-free reductions hold exactly:
with no annotations and default weights, IS+ collapses to IS, the augmented
doubly-robust variants collapse to plain DR, and the naive flattened DR
collapses to DR as well.

Estimators whose correctness rests on logging-policy support raise
:class:`CoverageViolation` up front when the evaluation problem is flagged
uncovered; passing ``require_coverage=False`` skips that guard and evaluates
the (then biased) estimator anyway, which is what the estimator-selection
analysis does on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .annotations import AugmentedBehaviorPolicy, AugmentedDataset
from .core import Dataset, EnvSpec, EvaluationProblem, Policy, ratio_table
from .errors import CoverageViolation, DegenerateSupport
from .rewards import RewardModel

__all__ = [
    "EstimatorId",
    "Estimate",
    "estimate_is",
    "estimate_dm",
    "estimate_dm_plus",
    "estimate_is_plus",
    "estimate_dr",
    "estimate_dm_plus_is",
    "estimate_dm_is_plus",
    "estimate_dm_plus_is_plus",
    "estimate_naive_dr",
]


class EstimatorId(str, Enum):
    """Identifiers for every estimator the harness can run."""

    IS = "IS"
    DM = "DM"
    DM_PLUS = "DM+"
    IS_PLUS = "IS+"
    DM_IS = "DM-IS"
    DM_PLUS_IS = "DM+-IS"
    DM_IS_PLUS = "DM-IS+"
    DM_PLUS_IS_PLUS = "DM+-IS+"
    NAIVE_DR = "NaiveDR"

    def __str__(self) -> str:  # CSV-friendly
        return self.value


@dataclass(frozen=True)
class Estimate:
    """A point estimate plus light diagnostics."""

    value: float
    n_used: int
    max_ratio: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise ValueError("estimate must be finite")


def _require_common_support(problem: EvaluationProblem) -> None:
    if not problem.covered:
        raise CoverageViolation(
            "target policy is not supported by the logging policy (missing coverage)"
        )


def _require_augmented_support(pi_e: Policy, pib_plus: AugmentedBehaviorPolicy) -> None:
    if ((pi_e.probs > 0) & (pib_plus.probs <= 0)).any():
        raise DegenerateSupport(
            "target policy is not supported by the augmented logging policy"
        )


def _observed_ratios(dataset: Dataset, problem: EvaluationProblem) -> np.ndarray:
    table = ratio_table(problem.pi_e.probs, problem.pi_b.probs)
    return table[dataset.contexts, dataset.actions]


def estimate_is(
    dataset: Dataset, problem: EvaluationProblem, *, require_coverage: bool = True
) -> Estimate:
    """Importance sampling: mean of ratio-weighted rewards."""
    if require_coverage:
        _require_common_support(problem)
    rho = _observed_ratios(dataset, problem)
    value = float((rho * dataset.rewards).mean())
    return Estimate(value, dataset.n, float(np.abs(rho).max()))


def estimate_dm(
    model: RewardModel,
    env: EnvSpec,
    pi_e: Policy,
    mode: str = "exact",
    data: Optional[Dataset] = None,
) -> Estimate:
    """Direct method: plug the fitted model into the target policy.

    ``mode='exact'`` weights contexts by d0; ``mode='sample'`` averages the
    model's policy value over the contexts of ``data``.
    """
    policy_vals = model.policy_values(pi_e.probs)
    if mode == "exact":
        return Estimate(float(env.d0 @ policy_vals), 0)
    if mode == "sample":
        if data is None:
            raise ValueError("sample mode needs an evaluation dataset")
        return Estimate(float(policy_vals[data.contexts].mean()), data.n)
    raise ValueError(f"unknown DM mode {mode!r}")


def estimate_dm_plus(
    model_plus: RewardModel,
    env: EnvSpec,
    pi_e: Policy,
    mode: str = "exact",
    data: Optional[Dataset] = None,
) -> Estimate:
    """Direct method with the annotation-augmented reward model."""
    return estimate_dm(model_plus, env, pi_e, mode=mode, data=data)


def estimate_is_plus(
    aug: AugmentedDataset,
    pi_e: Policy,
    pib_plus: AugmentedBehaviorPolicy,
    *,
    require_coverage: bool = True,
) -> Estimate:
    """Annotation-augmented importance sampling.

    (1/N) sum_i sum_a w_i^a rho_plus(a|s_i) c_i^a, where c pools the factual
    reward with whatever annotations exist and the weights form a convex
    combination per sample.
    """
    if require_coverage:
        _require_augmented_support(pi_e, pib_plus)
    rho_plus = ratio_table(pi_e.probs, pib_plus.probs)[aug.dataset.contexts]
    contrib = aug.weights * rho_plus * aug.combined_values()
    used = aug.weights > 0
    max_ratio = float(np.abs(rho_plus[used]).max()) if used.any() else 0.0
    return Estimate(float(contrib.sum(axis=1).mean()), aug.n_factual, max_ratio)


def estimate_dr(
    dataset: Dataset,
    model: RewardModel,
    problem: EvaluationProblem,
    *,
    require_coverage: bool = True,
) -> Estimate:
    """Doubly robust: model value plus ratio-weighted residual correction."""
    if require_coverage:
        _require_common_support(problem)
    rho = _observed_ratios(dataset, problem)
    policy_vals = model.policy_values(problem.pi_e.probs)[dataset.contexts]
    fitted = model.predict_many(dataset.contexts, dataset.actions)
    value = float((policy_vals + rho * (dataset.rewards - fitted)).mean())
    return Estimate(value, dataset.n, float(np.abs(rho).max()))


def estimate_dm_plus_is(
    dataset: Dataset,
    model_plus: RewardModel,
    problem: EvaluationProblem,
    *,
    require_coverage: bool = True,
) -> Estimate:
    """Doubly robust with the augmented reward model and plain importance ratios."""
    return estimate_dr(dataset, model_plus, problem, require_coverage=require_coverage)


def _augmented_dr(
    aug: AugmentedDataset,
    model: RewardModel,
    pi_e: Policy,
    pib_plus: AugmentedBehaviorPolicy,
    require_coverage: bool,
) -> Estimate:
    if require_coverage:
        _require_augmented_support(pi_e, pib_plus)
    contexts = aug.dataset.contexts
    rho_plus = ratio_table(pi_e.probs, pib_plus.probs)[contexts]
    policy_vals = model.policy_values(pi_e.probs)[contexts]
    residual = aug.combined_values() - model.table[contexts]
    correction = (aug.weights * rho_plus * residual).sum(axis=1)
    used = aug.weights > 0
    max_ratio = float(np.abs(rho_plus[used]).max()) if used.any() else 0.0
    return Estimate(float((policy_vals + correction).mean()), aug.n_factual, max_ratio)


def estimate_dm_is_plus(
    aug: AugmentedDataset,
    model: RewardModel,
    pi_e: Policy,
    pib_plus: AugmentedBehaviorPolicy,
    *,
    require_coverage: bool = True,
) -> Estimate:
    """Doubly robust with an annotation-augmented correction term.

    The reward model is fitted on factual data only; the correction pools
    factual and annotated values through the augmented ratios.
    """
    return _augmented_dr(aug, model, pi_e, pib_plus, require_coverage)


def estimate_dm_plus_is_plus(
    aug: AugmentedDataset,
    model_plus: RewardModel,
    pi_e: Policy,
    pib_plus: AugmentedBehaviorPolicy,
    *,
    require_coverage: bool = True,
) -> Estimate:
    """Doubly robust using annotations in both the model and the correction."""
    return _augmented_dr(aug, model_plus, pi_e, pib_plus, require_coverage)


def estimate_naive_dr(
    aug: AugmentedDataset,
    model_plus: RewardModel,
    problem: EvaluationProblem,
    *,
    require_coverage: bool = True,
) -> Estimate:
    """Standard DR applied to the flattened factual + annotation rows.

    Every annotation becomes an extra pseudo-sample, but the normalization
    stays 1/N, so extra rows inflate the total mass.  Deliberately biased
    whenever annotations are present; kept as the cautionary baseline.
    """
    ds = aug.dataset
    rows_i, cols_a = np.nonzero(aug.annotation_mask)
    flat_contexts = np.concatenate([ds.contexts, ds.contexts[rows_i]])
    flat_actions = np.concatenate([ds.actions, cols_a])
    flat_values = np.concatenate([ds.rewards, aug.annotation_values[rows_i, cols_a]])

    table = ratio_table(problem.pi_e.probs, problem.pi_b.probs)
    if require_coverage:
        uncovered = (problem.pi_e.probs > 0) & (problem.pi_b.probs <= 0)
        if uncovered[flat_contexts, flat_actions].any():
            raise CoverageViolation(
                "flattened rows contain actions the logging policy never takes"
            )
    rho = table[flat_contexts, flat_actions]
    policy_vals = model_plus.policy_values(problem.pi_e.probs)[flat_contexts]
    fitted = model_plus.predict_many(flat_contexts, flat_actions)
    total = float((policy_vals + rho * (flat_values - fitted)).sum())
    return Estimate(total / ds.n, ds.n, float(np.abs(rho).max()))
