"""The three benchmark environments and their policy suites.

Each builder returns an :class:`~cfope.core.EnvSpec` whose generative side
(mean rewards, noise, d0) is always the true one; the ``misspecify`` switch
only degrades what the reward model gets to see, either by corrupting the
observed context (two-context) or by handing the fit a weaker feature map
(step-count and sepsis simulators).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import EnvSpec, Policy

__all__ = [
    "TwoContextConfig",
    "HeartstepsConfig",
    "SepsisConfig",
    "PolicySuite",
    "build_two_context",
    "build_heartsteps",
    "build_sepsis",
    "policy_suite",
    "ENV_KINDS",
]

ENV_KINDS = ("two-context", "heartsteps", "sepsis")

# The three two-action distributions every pairwise suite is built from.
_TWO_ACTION_POLICIES = ((0.1, 0.9), (0.5, 0.5), (0.9, 0.1))


@dataclass(frozen=True)
class TwoContextConfig:
    """Two contexts, two actions; reward only ever comes from the first context.

    Defaults are calibrated so the flattened naive-DR baseline reproduces its
    reference error table (see tests).
    """

    mean_rewards: tuple[float, float] = (1.5, -0.4)
    reward_std: float = 0.42
    misspecify: bool = False
    corrupt_fraction: float = 0.5


@dataclass(frozen=True)
class HeartstepsConfig:
    """One-step mobile-intervention simulator on square-root step counts.

    Contexts are 80 equal-width bins of the previous day's square-root step
    count; the mean next-day count is linear in
    [decay, prev_sqrt_steps, sent_intervention] with the coefficients below.
    The default d0 concentrates around a typical user's activity level
    (a discretized normal over the bins); ``d0_std=None`` gives uniform d0.
    """

    theta: tuple[float, float, float] = (-0.04, 0.9999, 0.3)
    n_contexts: int = 80
    sqrt_steps_range: tuple[float, float] = (45.0, 60.0)
    d0_std: Optional[float] = 1.25
    decay: float = 1.0
    reward_std: float = 0.3
    misspecify: bool = False


@dataclass(frozen=True)
class SepsisConfig:
    """One-step bandit adaptation of a sepsis treatment simulator.

    Contexts enumerate discretized vitals (heart rate 3, blood pressure 3,
    oxygen 2, glucose 5), a diabetic flag, and the three current treatment
    flags: 1440 states plus two absorbing states excluded from d0.  Actions
    are the 8 on/off combinations of the three treatments.  Mean reward is
    -(#abnormal vitals) - 1{any treatment active after the action}.
    """

    reward_std: float = 1.0
    misspecify: bool = False
    misspecified_width: int = 168
    include_absorbing: bool = True


@dataclass(frozen=True)
class PolicySuite:
    """Named (logging, target) policy pairs for one environment."""

    pairs: tuple[tuple[Policy, Policy], ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.pairs)

    def ids(self) -> list[tuple[str, str]]:
        return [(b.name, e.name) for b, e in self.pairs]


def build_two_context(cfg: TwoContextConfig = TwoContextConfig()) -> EnvSpec:
    r1, r2 = cfg.mean_rewards
    mean = np.array([[r1, r2], [0.0, 0.0]])
    std = np.array([[cfg.reward_std, cfg.reward_std], [0.0, 0.0]])
    observe = None
    if cfg.misspecify:
        frac = cfg.corrupt_fraction

        def observe(contexts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
            hit = rng.random(contexts.shape[0]) < frac
            return np.where(hit, rng.integers(0, 2, size=contexts.shape[0]), contexts)

    return EnvSpec(
        name="two-context",
        d0=np.array([0.5, 0.5]),
        mean_reward=mean,
        reward_std=std,
        observe=observe,
    )


def build_heartsteps(cfg: HeartstepsConfig = HeartstepsConfig()) -> EnvSpec:
    lo, hi = cfg.sqrt_steps_range
    edges = np.linspace(lo, hi, cfg.n_contexts + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    theta = np.asarray(cfg.theta)

    def features(contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        prev = centers[contexts]
        treat = (actions != 0).astype(float)
        return np.column_stack([np.full(contexts.shape[0], cfg.decay), prev, treat])

    def features_misspecified(contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return features(contexts, actions)[:, :2]

    grid_s = np.repeat(np.arange(cfg.n_contexts), 2)
    grid_a = np.tile(np.arange(2), cfg.n_contexts)
    mean = (features(grid_s, grid_a) @ theta).reshape(cfg.n_contexts, 2)
    if cfg.d0_std is None:
        d0 = np.full(cfg.n_contexts, 1.0 / cfg.n_contexts)
    else:
        mid = 0.5 * (lo + hi)
        d0 = np.exp(-0.5 * ((centers - mid) / cfg.d0_std) ** 2)
        d0 /= d0.sum()
    return EnvSpec(
        name="heartsteps",
        d0=d0,
        mean_reward=mean,
        reward_std=np.full((cfg.n_contexts, 2), cfg.reward_std),
        feature_map=features_misspecified if cfg.misspecify else features,
        context_features=centers[:, None],
    )


# Sepsis discretization levels: heart rate / blood pressure {low, normal,
# high}, oxygen {low, normal}, glucose {very low, low, normal, high, very
# high}; "normal" codes are 1, 1, 1, 2.
_SEPSIS_LEVELS = (3, 3, 2, 5, 2, 2, 2, 2)
_NORMAL_CODES = (1, 1, 1, 2)
_SEPSIS_ACTIONS = 8


def _sepsis_context_table(include_absorbing: bool) -> np.ndarray:
    rows = list(itertools.product(*[range(k) for k in _SEPSIS_LEVELS]))
    table = np.array(rows, dtype=np.int64)
    if include_absorbing:
        # Two absorbing states (discharged / deceased), all-normal feature rows.
        absorbing = np.tile(np.array([[1, 1, 1, 2, 0, 0, 0, 0]], dtype=np.int64), (2, 1))
        table = np.vstack([table, absorbing])
    return table


def _abnormal_vital_count(table: np.ndarray) -> np.ndarray:
    normal = np.asarray(_NORMAL_CODES)
    return (table[:, :4] != normal[None, :]).sum(axis=1)


def _misspecified_selector(mean_reward: np.ndarray, width: int) -> np.ndarray:
    """Indices of the `width` least relevant one-hot coordinates.

    Candidates are the context-id one-hot block followed by the action
    one-hot block; relevance of a coordinate is how far the mean reward,
    conditioned on that coordinate firing, sits from the global mean.
    """
    s_count, a_count = mean_reward.shape
    overall = mean_reward.mean()
    context_relevance = np.abs(mean_reward.mean(axis=1) - overall)
    action_relevance = np.abs(mean_reward.mean(axis=0) - overall)
    relevance = np.concatenate([context_relevance, action_relevance])
    order = np.argsort(relevance, kind="stable")
    return np.sort(order[:width])


def build_sepsis(cfg: SepsisConfig = SepsisConfig()) -> EnvSpec:
    table = _sepsis_context_table(cfg.include_absorbing)
    s_count = table.shape[0]
    abnormal = _abnormal_vital_count(table)
    on_treatment = (np.arange(_SEPSIS_ACTIONS) != 0).astype(float)
    mean = -abnormal[:, None].astype(float) - on_treatment[None, :]
    if cfg.include_absorbing:
        mean[-2:, :] = 0.0

    d0 = np.zeros(s_count)
    live = s_count - 2 if cfg.include_absorbing else s_count
    d0[:live] = 1.0 / live

    std = np.full((s_count, _SEPSIS_ACTIONS), cfg.reward_std)
    if cfg.include_absorbing:
        std[-2:, :] = 0.0

    def features(contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.column_stack(
            [abnormal[contexts].astype(float), (actions != 0).astype(float)]
        )

    feature_map = features
    if cfg.misspecify:
        selector = _misspecified_selector(mean, cfg.misspecified_width)
        # position[j] = column of coordinate j in the selected design, -1 if dropped
        position = np.full(s_count + _SEPSIS_ACTIONS, -1, dtype=np.int64)
        position[selector] = np.arange(selector.size)

        def features_misspecified(contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
            n = contexts.shape[0]
            out = np.zeros((n, selector.size))
            rows = np.arange(n)
            ctx_col = position[contexts]
            hit = ctx_col >= 0
            out[rows[hit], ctx_col[hit]] = 1.0
            act_col = position[s_count + actions]
            hit = act_col >= 0
            out[rows[hit], act_col[hit]] = 1.0
            return out

        feature_map = features_misspecified

    return EnvSpec(
        name="sepsis",
        d0=d0,
        mean_reward=mean,
        reward_std=std,
        feature_map=feature_map,
        context_features=table,
    )


_SEPSIS_BEHAVIOR = (
    (0.1, 0.1, 0.4, 0.3, 0.1, 0.0, 0.0, 0.0),
    (0.1, 0.1, 0.4, 0.2, 0.1, 0.1, 0.0, 0.0),
    (0.1, 0.1, 0.4, 0.1, 0.1, 0.1, 0.0, 0.1),
    (0.1, 0.1, 0.3, 0.1, 0.1, 0.1, 0.1, 0.1),
    (0.2, 0.1, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1),
    (0.3, 0.1, 0.2, 0.0, 0.1, 0.1, 0.1, 0.1),
)
_SEPSIS_TARGET = (0.3, 0.2, 0.0, 0.0, 0.2, 0.1, 0.1, 0.1)


def policy_suite(env_kind: str, n_contexts: Optional[int] = None) -> PolicySuite:
    """The benchmark (logging, target) policy pairs for an environment kind.

    Two-action environments use all 9 ordered combinations of three fixed
    distributions; the sepsis suite pairs six logging policies of varying
    coverage with one fixed target policy.
    """
    if env_kind in ("two-context", "heartsteps"):
        s = n_contexts if n_contexts is not None else (2 if env_kind == "two-context" else 80)
        policies = [Policy.uniform_over_contexts(v, s) for v in _TWO_ACTION_POLICIES]
        pairs = tuple((b, e) for b in policies for e in policies)
        return PolicySuite(pairs)
    if env_kind == "sepsis":
        s = n_contexts if n_contexts is not None else 1442
        target = Policy.uniform_over_contexts(_SEPSIS_TARGET, s, name="pi_e")
        pairs = tuple(
            (Policy.uniform_over_contexts(v, s, name=f"pi_b{i + 1}"), target)
            for i, v in enumerate(_SEPSIS_BEHAVIOR)
        )
        return PolicySuite(pairs)
    raise ValueError(f"unknown environment kind {env_kind!r}")


def build_env(kind: str, misspecify: bool = False, **options) -> EnvSpec:
    """Build an environment by kind name with keyword overrides."""
    if kind == "two-context":
        return build_two_context(TwoContextConfig(misspecify=misspecify, **options))
    if kind == "heartsteps":
        return build_heartsteps(HeartstepsConfig(misspecify=misspecify, **options))
    if kind == "sepsis":
        return build_sepsis(SepsisConfig(misspecify=misspecify, **options))
    raise ValueError(f"unknown environment kind {kind!r}")
