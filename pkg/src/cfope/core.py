"""Core bandit types: environments, policies, datasets, and policy values.

Everything here is immutable after construction and pure given explicit
seeds, so instances can be shared freely across threads and trials.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CoverageViolation
from .rng import child_rng

__all__ = [
    "EnvSpec",
    "Policy",
    "EvaluationProblem",
    "FactualSample",
    "Dataset",
    "ips_ratio",
    "sample_dataset",
    "policy_value_exact",
    "policy_value_mc",
]

_ATOL = 1e-12

# observe(contexts, rng) -> possibly corrupted contexts; feature_map(contexts,
# actions) -> (n, d) design rows.
ObserveFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]
FeatureMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EnvSpec:
    """Full generative description of a discrete contextual bandit.

    Parameters
    ----------
    name : str
        Human-readable environment identifier.
    d0 : array, shape (S,)
        Initial context distribution; must sum to 1.
    mean_reward : array, shape (S, A)
        Mean reward of each context-action cell.
    reward_std : array, shape (S, A)
        Reward standard deviation per cell; rewards are Gaussian.
    observe : callable, optional
        Context-corruption map applied when building reward-model training
        data.  Identity (``None``) unless misspecification is active.
    feature_map : callable, optional
        Design-row builder for linear reward models; signature
        ``(contexts, actions) -> (n, n_features)``.
    context_features : array, optional
        Side table of structured per-context records (used by feature maps).
    """

    name: str
    d0: np.ndarray
    mean_reward: np.ndarray
    reward_std: np.ndarray
    observe: Optional[ObserveFn] = None
    feature_map: Optional[FeatureMap] = None
    context_features: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "d0", _frozen(self.d0))
        object.__setattr__(self, "mean_reward", _frozen(self.mean_reward))
        object.__setattr__(self, "reward_std", _frozen(self.reward_std))
        if self.context_features is not None:
            object.__setattr__(self, "context_features", _frozen(self.context_features))
        if self.d0.ndim != 1 or self.mean_reward.ndim != 2:
            raise ValueError("d0 must be (S,) and mean_reward (S, A)")
        if self.mean_reward.shape != self.reward_std.shape:
            raise ValueError("mean_reward and reward_std shapes differ")
        if self.mean_reward.shape[0] != self.d0.shape[0]:
            raise ValueError("d0 length does not match mean_reward rows")
        if abs(self.d0.sum() - 1.0) > _ATOL:
            raise ValueError(f"d0 sums to {self.d0.sum()!r}, not 1")
        if (self.d0 < 0).any():
            raise ValueError("d0 has negative entries")
        if (self.reward_std < 0).any():
            raise ValueError("reward_std has negative entries")

    @property
    def n_contexts(self) -> int:
        return self.d0.shape[0]

    @property
    def n_actions(self) -> int:
        return self.mean_reward.shape[1]

    @property
    def context_ids(self) -> np.ndarray:
        return np.arange(self.n_contexts)

    def observed_contexts(
        self, contexts: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """Apply the observation map (identity when none is configured)."""
        if self.observe is None:
            return contexts
        out = np.asarray(self.observe(contexts, rng))
        if out.min(initial=0) < 0 or out.max(initial=0) >= self.n_contexts:
            raise ValueError("observe produced out-of-range context ids")
        return out

    def mean_reward_std(self) -> float:
        """Plain average of reward_std over all cells (grid-scaling unit)."""
        return float(self.reward_std.mean())


@dataclass(frozen=True)
class Policy:
    """Row-stochastic context-to-action-distribution table.

    ``probs[s, a]`` is the probability of action ``a`` in context ``s``.
    """

    probs: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "probs", _frozen(self.probs))
        p = self.probs
        if p.ndim != 2:
            raise ValueError("policy table must be two-dimensional")
        if (p < 0).any() or (p > 1).any():
            raise ValueError("policy probabilities must lie in [0, 1]")
        rows = p.sum(axis=1)
        if np.abs(rows - 1.0).max() > _ATOL:
            raise ValueError("policy rows must sum to 1 within 1e-12")

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def prob(self, s: int, a: int) -> float:
        return float(self.probs[s, a])

    @classmethod
    def uniform_over_contexts(cls, vector: Sequence[float], n_contexts: int, name: str = "") -> "Policy":
        """Tile one action distribution across every context."""
        row = np.asarray(vector, dtype=float)
        return cls(np.tile(row, (n_contexts, 1)), name=name or _vector_name(row))


def _vector_name(row: np.ndarray) -> str:
    return "[" + ",".join(f"{p:g}" for p in row) + "]"


def _common_support(pi_b: np.ndarray, pi_e: np.ndarray) -> bool:
    return bool(np.all((pi_e <= 0) | (pi_b > 0)))


@dataclass(frozen=True)
class EvaluationProblem:
    """An environment packaged with its logging and target policies.

    ``covered`` records whether the target policy is supported by the
    logging policy everywhere; estimators that rely on plain importance
    ratios consult it.
    """

    env: EnvSpec
    pi_b: Policy
    pi_e: Policy
    covered: bool = field(init=False)

    def __post_init__(self) -> None:
        s, a = self.env.n_contexts, self.env.n_actions
        if self.pi_b.probs.shape != (s, a) or self.pi_e.probs.shape != (s, a):
            raise ValueError("policy tables must match the environment shape")
        object.__setattr__(self, "covered", _common_support(self.pi_b.probs, self.pi_e.probs))


@dataclass(frozen=True)
class FactualSample:
    """One logged interaction (context, action, reward)."""

    context: int
    action: int
    reward: float


@dataclass(frozen=True)
class Dataset:
    """Logged interactions in column form.

    Attributes
    ----------
    contexts, actions : int arrays, shape (N,)
    rewards : float array, shape (N,)
    source_seed : int
        Root seed the dataset was drawn from (bookkeeping only).
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    source_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "contexts", _frozen(self.contexts, dtype=np.int64))
        object.__setattr__(self, "actions", _frozen(self.actions, dtype=np.int64))
        object.__setattr__(self, "rewards", _frozen(self.rewards, dtype=float))
        n = self.contexts.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.actions.shape[0] != n or self.rewards.shape[0] != n:
            raise ValueError("dataset columns must share one length")
        if not np.isfinite(self.rewards).all():
            raise ValueError("rewards must be finite")
        if (self.actions < 0).any():
            raise ValueError("actions must be nonnegative ids")

    @property
    def n(self) -> int:
        return self.contexts.shape[0]

    @property
    def samples(self) -> tuple[FactualSample, ...]:
        return tuple(
            FactualSample(int(s), int(a), float(r))
            for s, a, r in zip(self.contexts, self.actions, self.rewards)
        )

    def pair_counts(self, n_contexts: int, n_actions: int) -> np.ndarray:
        """Visit counts per context-action cell, shape (S, A)."""
        flat = self.contexts * n_actions + self.actions
        return np.bincount(flat, minlength=n_contexts * n_actions).reshape(
            n_contexts, n_actions
        )

    def with_contexts(self, contexts: np.ndarray) -> "Dataset":
        """Copy of the dataset with its context column replaced."""
        return Dataset(contexts, self.actions, self.rewards, self.source_seed)


def ips_ratio(problem: EvaluationProblem, s: int, a: int) -> float:
    """Importance ratio pi_e(a|s) / pi_b(a|s), with 0/0 defined as 0.

    Raises
    ------
    CoverageViolation
        If the target policy needs action ``a`` in context ``s`` but the
        logging policy never takes it.
    """
    pe = problem.pi_e.prob(s, a)
    pb = problem.pi_b.prob(s, a)
    if pe == 0.0:
        return 0.0
    if pb == 0.0:
        raise CoverageViolation(
            f"pi_e({a}|{s})={pe} but pi_b({a}|{s})=0: action is never logged"
        )
    return pe / pb


def ratio_table(pi_e: np.ndarray, pi_b: np.ndarray) -> np.ndarray:
    """Elementwise pi_e/pi_b with the 0/0 := 0 convention (no coverage check)."""
    out = np.zeros_like(pi_e)
    np.divide(pi_e, pi_b, out=out, where=pi_b > 0)
    return out


def _sample_actions(prob_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one action per row of a stacked probability matrix."""
    cdf = np.cumsum(prob_rows, axis=1)
    u = rng.random(prob_rows.shape[0])
    return np.minimum((u[:, None] > cdf).sum(axis=1), prob_rows.shape[1] - 1)


def sample_dataset(problem: EvaluationProblem, n: int, seed: int) -> Dataset:
    """Draw a logged dataset: s ~ d0, a ~ pi_b(.|s), r ~ N(mean, std^2).

    Deterministic given (problem, n, seed).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    env = problem.env
    rng = child_rng(seed, "dataset")
    contexts = rng.choice(env.n_contexts, size=n, p=env.d0)
    actions = _sample_actions(problem.pi_b.probs[contexts], rng)
    means = env.mean_reward[contexts, actions]
    stds = env.reward_std[contexts, actions]
    rewards = means + stds * rng.standard_normal(n)
    return Dataset(contexts, actions, rewards, source_seed=seed)


def policy_value_exact(env: EnvSpec, pi_e: Policy) -> float:
    """Exact target value: sum_s d0(s) sum_a pi_e(a|s) mean_reward(s, a)."""
    per_context = (pi_e.probs * env.mean_reward).sum(axis=1)
    return float(env.d0 @ per_context)


def policy_value_mc(env: EnvSpec, pi_e: Policy, n: int, seed: int) -> float:
    """Monte-Carlo target value from n on-policy reward draws."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = child_rng(seed, "on-policy-value")
    contexts = rng.choice(env.n_contexts, size=n, p=env.d0)
    actions = _sample_actions(pi_e.probs[contexts], rng)
    rewards = env.mean_reward[contexts, actions] + env.reward_std[
        contexts, actions
    ] * rng.standard_normal(n)
    return float(rewards.mean())


def context_value(env: EnvSpec, pi_e: Policy) -> np.ndarray:
    """Per-context target value v(s) = sum_a pi_e(a|s) mean_reward(s, a)."""
    return (pi_e.probs * env.mean_reward).sum(axis=1)
