"""Counterfactual annotation generation, weighting, and the augmented logging policy.

Annotations are synthetic reward draws for actions not taken in a logged
sample.  They may be biased (mean offset) and noisier (variance offset) than
the true reward distribution, and each one exists only with a configurable
availability probability.  Weights turn a factual sample plus its annotations
into a convex combination; the induced average weights define the augmented
logging policy used by the augmented importance ratios.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import Dataset, EnvSpec, FactualSample, Policy, _frozen
from .errors import CoverageViolation, WeightSumViolation
from .rng import child_rng

__all__ = [
    "AnnotationModel",
    "AnnotationSet",
    "AugmentedSample",
    "AugmentedDataset",
    "AugmentedBehaviorPolicy",
    "WeightScheme",
    "annotate",
    "assign_weights",
    "mean_weight",
    "augmented_behavior_policy",
    "augmented_ips_ratio",
]

_ATOL = 1e-12
_MAX_ENUM_ACTIONS = 17  # subset enumeration is 2**(A-1)


@dataclass(frozen=True)
class AnnotationModel:
    """Annotation distribution as offsets on the true reward distribution.

    An annotation for cell (s, a) is drawn from
    ``Normal(mean_reward + bias, reward_var + excess_variance)`` and exists
    with probability ``availability``.  ``bias == 0`` and
    ``excess_variance == 0`` encode perfect annotations.
    """

    bias: np.ndarray
    excess_variance: np.ndarray
    availability: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "bias", _frozen(self.bias))
        object.__setattr__(self, "excess_variance", _frozen(self.excess_variance))
        object.__setattr__(self, "availability", _frozen(self.availability))
        if not (self.bias.shape == self.excess_variance.shape == self.availability.shape):
            raise ValueError("annotation model tables must share one (S, A) shape")
        if (self.excess_variance < 0).any():
            raise ValueError("excess_variance must be nonnegative")
        if (self.availability < 0).any() or (self.availability > 1).any():
            raise ValueError("availability must lie in [0, 1]")

    @classmethod
    def constant(
        cls,
        env: EnvSpec,
        bias: float = 0.0,
        excess_variance: float = 0.0,
        availability: float = 1.0,
    ) -> "AnnotationModel":
        shape = (env.n_contexts, env.n_actions)
        return cls(
            np.full(shape, float(bias)),
            np.full(shape, float(excess_variance)),
            np.full(shape, float(availability)),
        )

    @property
    def perfect(self) -> bool:
        return bool((self.bias == 0).all() and (self.excess_variance == 0).all())


@dataclass(frozen=True)
class AnnotationSet:
    """Annotations attached to one factual sample, keyed by counterfactual action."""

    values: dict[int, float]

    def __post_init__(self) -> None:
        for v in self.values.values():
            if not np.isfinite(v):
                raise ValueError("annotation values must be finite")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class AugmentedSample:
    """Factual sample plus its annotation set and convex weights."""

    factual: FactualSample
    annotations: AnnotationSet
    weights: np.ndarray

    def combined(self, a: int) -> float:
        """Reward if ``a`` is the factual action, else the annotation for ``a``."""
        if a == self.factual.action:
            return self.factual.reward
        return self.annotations.values[a]


@dataclass(frozen=True)
class AugmentedDataset:
    """Factual dataset with per-sample annotation matrices.

    ``annotation_mask[i, a]`` marks a present annotation (always False at the
    factual action); ``annotation_values`` is NaN wherever the mask is False.
    ``weights`` rows sum to 1; before :func:`assign_weights` runs, all mass
    sits on the factual action.
    """

    dataset: Dataset
    annotation_values: np.ndarray
    annotation_mask: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "annotation_values", _frozen(self.annotation_values))
        object.__setattr__(self, "annotation_mask", _frozen(self.annotation_mask, dtype=bool))
        object.__setattr__(self, "weights", _frozen(self.weights))
        n = self.dataset.n
        if self.annotation_values.shape != self.annotation_mask.shape or self.annotation_values.shape[0] != n:
            raise ValueError("annotation matrices must be (N, A)")
        if self.annotation_mask[np.arange(n), self.dataset.actions].any():
            raise ValueError("factual actions cannot carry annotations")
        if not np.isfinite(self.annotation_values[self.annotation_mask]).all():
            raise ValueError("present annotations must be finite")
        row_sums = self.weights.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > 1e-9:
            raise WeightSumViolation("per-sample weights must sum to 1")

    @property
    def n_factual(self) -> int:
        return self.dataset.n

    @property
    def m_annotations(self) -> int:
        return int(self.annotation_mask.sum())

    @property
    def n_actions(self) -> int:
        return self.annotation_values.shape[1]

    def combined_values(self) -> np.ndarray:
        """(N, A) matrix of c[i, a]: factual reward on the factual column,
        annotation elsewhere, 0 where nothing is available."""
        n = self.dataset.n
        c = np.where(self.annotation_mask, np.nan_to_num(self.annotation_values), 0.0)
        c[np.arange(n), self.dataset.actions] = self.dataset.rewards
        return c

    def usable_mask(self) -> np.ndarray:
        """(N, A) True where a combined value exists (factual or annotated)."""
        m = self.annotation_mask.copy()
        m[np.arange(self.dataset.n), self.dataset.actions] = True
        return m

    def pair_annotation_counts(self, n_contexts: int) -> np.ndarray:
        """Annotation counts per (s, a) cell, shape (S, A)."""
        a = self.n_actions
        counts = np.zeros((n_contexts, a), dtype=np.int64)
        for col in range(a):
            present = self.annotation_mask[:, col]
            counts[:, col] = np.bincount(self.dataset.contexts[present], minlength=n_contexts)
        return counts

    def sample(self, i: int) -> AugmentedSample:
        factual = FactualSample(
            int(self.dataset.contexts[i]), int(self.dataset.actions[i]), float(self.dataset.rewards[i])
        )
        values = {
            int(a): float(self.annotation_values[i, a])
            for a in np.flatnonzero(self.annotation_mask[i])
        }
        return AugmentedSample(factual, AnnotationSet(values), self.weights[i].copy())


@dataclass(frozen=True)
class AugmentedBehaviorPolicy:
    """Effective logging policy induced by mixing annotation weights into pi_b."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", _frozen(self.probs))
        rows = self.probs.sum(axis=1)
        if np.abs(rows - 1.0).max() > 1e-10:
            raise ValueError("augmented policy rows must sum to 1 within 1e-10")
        if (self.probs < -1e-15).any():
            raise ValueError("augmented policy has negative entries")

    def prob(self, s: int, a: int) -> float:
        return float(self.probs[s, a])


def _enumerate_weight_moments(
    availability: np.ndarray, want_cov: bool
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Exact E[w] (and optionally E[w w^T]) of the equal-weight rule.

    Availability draws are independent Bernoullis per counterfactual action;
    the realized weight is 1/(1+k) on the factual action and each of the k
    available annotations.  Enumerates all 2**(A-1) availability patterns.
    """
    s_count, a_count = availability.shape
    if a_count - 1 > _MAX_ENUM_ACTIONS:
        raise ValueError("too many actions for availability-pattern enumeration")
    mean = np.zeros((s_count, a_count, a_count))
    second = np.zeros((s_count, a_count, a_count, a_count)) if want_cov else None
    for a_i in range(a_count):
        others = [a for a in range(a_count) if a != a_i]
        m = len(others)
        for bits in range(1 << m):
            chosen = [others[j] for j in range(m) if bits >> j & 1]
            prob = np.ones(s_count)
            for j, act in enumerate(others):
                p = availability[:, act]
                prob = prob * (p if bits >> j & 1 else 1.0 - p)
            w = np.zeros(a_count)
            w[a_i] = 1.0 / (1 + len(chosen))
            for act in chosen:
                w[act] = 1.0 / (1 + len(chosen))
            mean[:, a_i, :] += prob[:, None] * w[None, :]
            if second is not None:
                second[:, a_i, :, :] += prob[:, None, None] * np.outer(w, w)[None, :, :]
    cov = None
    if second is not None:
        cov = second - mean[:, :, :, None] * mean[:, :, None, :]
    return mean, cov


@dataclass(frozen=True)
class WeightScheme:
    """Weight rule for combining factual samples with their annotations.

    ``mean_weight[s, a, t]`` is the expected weight of action ``t`` given the
    factual pair (s, a); rows over ``t`` sum to 1.  ``weight_covariance`` is
    consumed only by the closed-form variance evaluator and may be omitted
    (None) when weights are deterministic.
    """

    kind: str
    mean_weight: np.ndarray
    weight_covariance: Optional[np.ndarray] = None
    availability: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in ("equal", "custom"):
            raise ValueError("kind must be 'equal' or 'custom'")
        object.__setattr__(self, "mean_weight", _frozen(self.mean_weight))
        if self.weight_covariance is not None:
            object.__setattr__(self, "weight_covariance", _frozen(self.weight_covariance))
        if self.availability is not None:
            object.__setattr__(self, "availability", _frozen(self.availability))
        w = self.mean_weight
        if w.ndim != 3 or w.shape[1] != w.shape[2]:
            raise ValueError("mean_weight must be (S, A, A)")
        if np.abs(w.sum(axis=2) - 1.0).max() > _ATOL:
            raise ValueError("mean_weight rows must sum to 1 within 1e-12")
        if self.availability is not None:
            # No expected mass on a counterfactual action that can never be annotated.
            s_count, a_count = self.availability.shape
            off = ~np.eye(a_count, dtype=bool)
            bad = (self.availability == 0)[:, None, :] & (w > _ATOL) & off[None, :, :]
            if bad.any():
                raise ValueError("mean_weight puts mass on never-available annotations")

    @classmethod
    def equal(cls, model: AnnotationModel, with_covariance: bool = False) -> "WeightScheme":
        """Equal weights over the factual sample and whichever annotations exist."""
        mean, cov = _enumerate_weight_moments(model.availability, with_covariance)
        return cls("equal", mean, cov, model.availability)

    @classmethod
    def from_table(
        cls, mean_weight: np.ndarray, weight_covariance: Optional[np.ndarray] = None
    ) -> "WeightScheme":
        return cls("custom", mean_weight, weight_covariance)


def annotate(dataset: Dataset, env: EnvSpec, model: AnnotationModel, seed: int) -> AugmentedDataset:
    """Draw counterfactual annotations for every sample under the model.

    For each factual (s_i, a_i) and each other action, an annotation exists
    with its availability probability and is drawn from
    ``Normal(mean + bias, reward_var + excess_variance)``.  Weights are left
    on the factual action until :func:`assign_weights`.
    """
    n, a_count = dataset.n, env.n_actions
    rng = child_rng(seed, "annotations")
    s = dataset.contexts
    counterfactual = np.ones((n, a_count), dtype=bool)
    counterfactual[np.arange(n), dataset.actions] = False
    mask = counterfactual & (rng.random((n, a_count)) < model.availability[s])
    scale = np.sqrt(env.reward_std[s] ** 2 + model.excess_variance[s])
    values = env.mean_reward[s] + model.bias[s] + scale * rng.standard_normal((n, a_count))
    values = np.where(mask, values, np.nan)
    weights = np.zeros((n, a_count))
    weights[np.arange(n), dataset.actions] = 1.0
    return AugmentedDataset(dataset, values, mask, weights)


def assign_weights(aug: AugmentedDataset, scheme: WeightScheme) -> AugmentedDataset:
    """Attach per-sample weights; missing-annotation mass goes to the factual action."""
    n, a_count = aug.dataset.n, aug.n_actions
    rows = np.arange(n)
    if scheme.kind == "equal":
        k = aug.annotation_mask.sum(axis=1)
        w = np.where(aug.annotation_mask, 1.0, 0.0) / (1.0 + k)[:, None]
        w[rows, aug.dataset.actions] = 1.0 / (1.0 + k)
    else:
        w = scheme.mean_weight[aug.dataset.contexts, aug.dataset.actions].copy()
        missing = ~aug.usable_mask()
        freed = np.where(missing, w, 0.0).sum(axis=1)
        w[missing] = 0.0
        w[rows, aug.dataset.actions] += freed
    sums = w.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-9:
        raise WeightSumViolation("assigned weights do not sum to 1")
    return replace(aug, weights=w)


def mean_weight(scheme: WeightScheme, s: int, a_factual: int, a_target: int) -> float:
    """Average weight of ``a_target`` given factual pair (s, a_factual)."""
    return float(scheme.mean_weight[s, a_factual, a_target])


def augmented_behavior_policy(pi_b: Policy, scheme: WeightScheme) -> AugmentedBehaviorPolicy:
    """Mix pi_b through the average weights: pi_b_plus(t|s) = sum_f Wbar(t|s,f) pi_b(f|s)."""
    probs = np.einsum("sft,sf->st", scheme.mean_weight, pi_b.probs)
    return AugmentedBehaviorPolicy(probs)


def augmented_ips_ratio(
    pi_e: Policy, pib_plus: AugmentedBehaviorPolicy, s: int, a: int
) -> float:
    """pi_e(a|s) / pi_b_plus(a|s), with 0/0 defined as 0."""
    pe = pi_e.prob(s, a)
    pb = pib_plus.prob(s, a)
    if pe == 0.0:
        return 0.0
    if pb == 0.0:
        raise CoverageViolation(
            f"pi_e({a}|{s})={pe} but augmented policy gives it zero probability"
        )
    return pe / pb
