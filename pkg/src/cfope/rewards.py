"""Reward-model fitting: tabular means, weighted means, and linear regression.

Models fitted on a plain :class:`~cfope.core.Dataset` see factual rewards
only; models fitted on an :class:`~cfope.annotations.AugmentedDataset` pool
counterfactual annotations into the training rows as well.  A fitted model
precomputes its full (S, A) prediction table, so downstream estimators only
ever index into it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .annotations import AugmentedDataset
from .core import Dataset, EnvSpec, FeatureMap, Policy, _frozen

__all__ = [
    "RewardModel",
    "FitReport",
    "fit_tabular_mean",
    "fit_tabular_weighted_mean",
    "fit_linear",
    "predict_policy",
]

TrainingData = Union[Dataset, AugmentedDataset]


@dataclass(frozen=True)
class FitReport:
    """Bookkeeping from one fit: per-cell counts, residual error, model class flag."""

    factual_counts: np.ndarray
    annotation_counts: Optional[np.ndarray]
    rss: float
    well_specified: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "factual_counts", _frozen(self.factual_counts, dtype=np.int64))
        if self.annotation_counts is not None:
            object.__setattr__(
                self, "annotation_counts", _frozen(self.annotation_counts, dtype=np.int64)
            )
        if (self.factual_counts < 0).any():
            raise ValueError("counts must be nonnegative")


@dataclass(frozen=True)
class RewardModel:
    """Fitted reward predictor over (context, action) cells.

    ``table[s, a]`` holds the prediction for every cell; unseen tabular cells
    are filled with ``fallback`` (the global mean of the training targets) so
    predictions are always finite.
    """

    kind: str
    table: np.ndarray
    fallback: float
    coef: Optional[np.ndarray] = None
    report: Optional[FitReport] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "table", _frozen(self.table))
        if self.coef is not None:
            object.__setattr__(self, "coef", _frozen(self.coef))
        if not np.isfinite(self.table).all():
            raise ValueError("prediction table must be finite everywhere")

    def predict(self, s: int, a: int) -> float:
        return float(self.table[s, a])

    def predict_many(self, contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return self.table[contexts, actions]

    def policy_values(self, policy_probs: np.ndarray) -> np.ndarray:
        """Per-context model value of a policy: sum_a pi(a|s) table[s, a]."""
        return (policy_probs * self.table).sum(axis=1)

    @classmethod
    def constant(cls, env: EnvSpec, value: float) -> "RewardModel":
        return cls("constant", np.full((env.n_contexts, env.n_actions), float(value)), float(value))

    @classmethod
    def from_table(cls, table: np.ndarray, kind: str = "frozen") -> "RewardModel":
        table = np.asarray(table, dtype=float)
        return cls(kind, table, float(table.mean()))


def _training_rows(data: TrainingData) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flatten training input into (contexts, actions, targets, is_annotation)."""
    if isinstance(data, AugmentedDataset):
        ds = data.dataset
        rows_i, cols_a = np.nonzero(data.annotation_mask)
        contexts = np.concatenate([ds.contexts, ds.contexts[rows_i]])
        actions = np.concatenate([ds.actions, cols_a])
        targets = np.concatenate([ds.rewards, data.annotation_values[rows_i, cols_a]])
        is_annotation = np.concatenate(
            [np.zeros(ds.n, dtype=bool), np.ones(rows_i.size, dtype=bool)]
        )
        return contexts, actions, targets, is_annotation
    return data.contexts, data.actions, data.rewards, np.zeros(data.n, dtype=bool)


def _cell_counts(
    contexts: np.ndarray, actions: np.ndarray, keep: np.ndarray, shape: tuple[int, int]
) -> np.ndarray:
    flat = contexts[keep] * shape[1] + actions[keep]
    return np.bincount(flat, minlength=shape[0] * shape[1]).reshape(shape)


def fit_tabular_mean(data: TrainingData, env: EnvSpec, well_specified: bool = True) -> RewardModel:
    """Per-cell arithmetic mean of all training values (annotations pooled equally)."""
    contexts, actions, targets, is_annotation = _training_rows(data)
    if contexts.size == 0:
        raise ValueError("training data is empty")
    shape = (env.n_contexts, env.n_actions)
    flat = contexts * env.n_actions + actions
    counts = np.bincount(flat, minlength=shape[0] * shape[1]).astype(float)
    sums = np.bincount(flat, weights=targets, minlength=shape[0] * shape[1])
    fallback = float(targets.mean())
    table = np.where(counts > 0, sums / np.maximum(counts, 1.0), fallback).reshape(shape)
    rss = float(((targets - table.reshape(-1)[flat]) ** 2).sum())
    report = FitReport(
        _cell_counts(contexts, actions, ~is_annotation, shape),
        _cell_counts(contexts, actions, is_annotation, shape) if is_annotation.any() else None,
        rss,
        well_specified,
    )
    return RewardModel("tabular-mean", table, fallback, report=report)


def fit_tabular_weighted_mean(
    data: AugmentedDataset, env: EnvSpec, well_specified: bool = True
) -> RewardModel:
    """Per-cell weighted mean sum(w c)/sum(w) using the sample weights.

    Cells whose entries carry zero total weight are treated as unseen and
    predict the fallback.
    """
    ds = data.dataset
    shape = (env.n_contexts, env.n_actions)
    rows_i, cols_a = np.nonzero(data.usable_mask())
    contexts = ds.contexts[rows_i]
    weights = data.weights[rows_i, cols_a]
    values = data.combined_values()[rows_i, cols_a]
    flat = contexts * env.n_actions + cols_a
    w_sums = np.bincount(flat, weights=weights, minlength=shape[0] * shape[1])
    wv_sums = np.bincount(flat, weights=weights * values, minlength=shape[0] * shape[1])
    seen = w_sums > 0
    fallback = float(values.mean()) if values.size else 0.0
    table = np.where(seen, wv_sums / np.maximum(w_sums, 1e-300), fallback).reshape(shape)
    rss = float((weights * (values - table.reshape(-1)[flat]) ** 2).sum())
    is_annotation = cols_a != ds.actions[rows_i]
    report = FitReport(
        _cell_counts(contexts, cols_a, ~is_annotation, shape),
        _cell_counts(contexts, cols_a, is_annotation, shape),
        rss,
        well_specified,
    )
    return RewardModel("tabular-weighted-mean", table, fallback, report=report)


# Full-grid design matrices are identical across fits of the same feature
# map, so memoize them.  Keys hold a strong reference to the callable, which
# keeps its id() stable for the cache's lifetime.
_GRID_DESIGN_CACHE: dict[tuple[int, int, int], tuple[FeatureMap, np.ndarray]] = {}


def _grid_design(phi: FeatureMap, env: EnvSpec) -> np.ndarray:
    key = (id(phi), env.n_contexts, env.n_actions)
    hit = _GRID_DESIGN_CACHE.get(key)
    if hit is not None and hit[0] is phi:
        return hit[1]
    grid_s = np.repeat(np.arange(env.n_contexts), env.n_actions)
    grid_a = np.tile(np.arange(env.n_actions), env.n_contexts)
    design = np.asarray(phi(grid_s, grid_a), dtype=float)
    _GRID_DESIGN_CACHE[key] = (phi, design)
    return design


def fit_linear(
    data: TrainingData,
    env: EnvSpec,
    feature_map: Optional[FeatureMap] = None,
    well_specified: bool = True,
) -> RewardModel:
    """Ordinary least squares on (feature_map(s, a), target) rows.

    Annotations enter unweighted, mirroring the tabular pooling.  Rank
    deficiency resolves to the minimum-norm solution.
    """
    phi = feature_map or env.feature_map
    if phi is None:
        raise ValueError("a feature map is required for linear fitting")
    contexts, actions, targets, is_annotation = _training_rows(data)
    design = np.asarray(phi(contexts, actions), dtype=float)
    if design.ndim != 2 or design.shape[0] != contexts.size or design.shape[0] < 1:
        raise ValueError("feature map must return one row per training sample")
    coef, _, _, _ = np.linalg.lstsq(design, targets, rcond=None)
    rss = float(((targets - design @ coef) ** 2).sum())
    table = (_grid_design(phi, env) @ coef).reshape(env.n_contexts, env.n_actions)
    shape = (env.n_contexts, env.n_actions)
    report = FitReport(
        _cell_counts(contexts, actions, ~is_annotation, shape),
        _cell_counts(contexts, actions, is_annotation, shape) if is_annotation.any() else None,
        rss,
        well_specified,
    )
    return RewardModel("linear", table, float(targets.mean()), coef=coef, report=report)


def predict_policy(model: RewardModel, s: int, pi: Policy) -> float:
    """Model value of the policy at one context: sum_a pi(a|s) predict(s, a)."""
    return float(pi.probs[s] @ model.table[s])
