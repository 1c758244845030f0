"""Experiment harness: configuration, trial execution, metric grids, and I/O.

A grid run sweeps annotation bias/variance cells over every configured
policy pair.  Each trial draws an evaluation dataset and an independent
model-fitting dataset, annotates both, fits the factual-only and augmented
reward models, and evaluates every requested estimator on the same data.
All randomness derives from (root seed, cell, pair, trial, purpose) tags,
so results are byte-identical across reruns and worker counts.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .annotations import (
    AnnotationModel,
    AugmentedBehaviorPolicy,
    WeightScheme,
    annotate,
    assign_weights,
    augmented_behavior_policy,
)
from .core import (
    Dataset,
    EnvSpec,
    EvaluationProblem,
    Policy,
    policy_value_exact,
    policy_value_mc,
    sample_dataset,
)
from .environments import ENV_KINDS, PolicySuite, build_env, policy_suite
from .errors import ConfigError, CoverageViolation, IoError
from .estimators import (
    Estimate,
    EstimatorId,
    estimate_dm,
    estimate_dm_is_plus,
    estimate_dm_plus,
    estimate_dm_plus_is,
    estimate_dm_plus_is_plus,
    estimate_dr,
    estimate_is,
    estimate_is_plus,
    estimate_naive_dr,
)
from .rewards import RewardModel, fit_linear, fit_tabular_mean, fit_tabular_weighted_mean
from .rng import child_rng, child_seed

__all__ = [
    "ExperimentConfig",
    "GridRow",
    "GridResult",
    "DeltaRow",
    "DeltaResult",
    "TrialFailure",
    "run_trial",
    "run_grid",
    "delta_analysis",
    "export",
    "load_grid",
    "default_config",
]

ALL_ESTIMATORS = tuple(EstimatorId)

_ENV_DEFAULTS = {
    "two-context": {"n": 100, "availability": 1.0, "reward_model": "tabular"},
    "heartsteps": {"n": 200, "availability": 1.0, "reward_model": "linear"},
    "sepsis": {"n": 700, "availability": 0.125, "reward_model": "linear"},
}
_REWARD_MODELS = ("tabular", "tabular-weighted", "linear")

# Grid defaults as multiples of the environment's average reward std (bias
# axis) and its square (excess-variance axis).
_EPS_MULTIPLES = (-2.0, -1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0, 2.0)
_DELTA_MULTIPLES = (0.0, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one grid run needs; immutable and JSON-loadable."""

    env: str
    n: int
    availability: float
    reward_model: str
    eps_grid: tuple[float, ...]
    delta_grid: tuple[float, ...]
    estimators: tuple[EstimatorId, ...] = ALL_ESTIMATORS
    misspecified_reward: bool = False
    trials: int = 100
    bootstrap: int = 200
    seed: int = 0
    workers: int = 1
    pair_indices: Optional[tuple[int, ...]] = None
    env_options: tuple[tuple[str, object], ...] = ()
    ground_truth: str = "exact"
    ground_truth_samples: int = 1000
    reward_range: Optional[float] = None

    def __post_init__(self) -> None:
        if self.env not in ENV_KINDS:
            raise ConfigError(f"unknown environment {self.env!r}")
        if self.reward_model not in _REWARD_MODELS:
            raise ConfigError(f"unknown reward model {self.reward_model!r}")
        if not self.eps_grid or not self.delta_grid:
            raise ConfigError("bias and variance grids must be nonempty")
        if self.trials < 2:
            raise ConfigError("trials must be >= 2")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not 0.0 <= self.availability <= 1.0:
            raise ConfigError("availability must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.ground_truth not in ("exact", "mc"):
            raise ConfigError("ground_truth must be 'exact' or 'mc'")
        if not self.estimators:
            raise ConfigError("at least one estimator is required")

    @property
    def options_dict(self) -> dict:
        return dict(self.env_options)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(raw)
        if "env" not in data:
            raise ConfigError("config must name an environment")
        defaults = _ENV_DEFAULTS.get(data["env"], {})
        for key, value in defaults.items():
            data.setdefault(key, value)
        if "estimators" in data:
            data["estimators"] = tuple(EstimatorId(e) for e in data["estimators"])
        for key in ("eps_grid", "delta_grid"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        if "pair_indices" in data and data["pair_indices"] is not None:
            data["pair_indices"] = tuple(int(i) for i in data["pair_indices"])
        if "env_options" in data:
            data["env_options"] = tuple(sorted(dict(data["env_options"]).items()))
        if "eps_grid" not in data or "delta_grid" not in data:
            env = build_env(data["env"], **dict(data.get("env_options", ())))
            unit = env.mean_reward_std()
            data.setdefault("eps_grid", tuple(m * unit for m in _EPS_MULTIPLES))
            data.setdefault("delta_grid", tuple(m * unit**2 for m in _DELTA_MULTIPLES))
        return cls(**data)


def default_config(env: str, **overrides) -> ExperimentConfig:
    """Config with the environment's benchmark defaults applied."""
    raw: dict = {"env": env}
    raw.update(overrides)
    return ExperimentConfig.from_dict(raw)


@dataclass(frozen=True)
class TrialFailure:
    """An estimator that could not run on a trial (e.g. missing coverage)."""

    reason: str


@dataclass(frozen=True)
class GridRow:
    env: str
    pi_b: str
    pi_e: str
    estimator: str
    eps_g: float
    delta_g: float
    rmse: float
    bias: float
    std: float
    se_rmse: float
    se_bias: float
    se_std: float
    trials: int


@dataclass(frozen=True)
class GridRowSet:
    rows: tuple

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class GridResult(GridRowSet):
    """Rows of bootstrapped RMSE/bias/std per (cell, policy pair, estimator).

    Per-pair rows satisfy rmse^2 = bias^2 + std^2 exactly (population-std
    convention); rows aggregated across pairs (pi_b = pi_e = 'avg') average
    each metric independently.
    """

    rows: tuple[GridRow, ...]


@dataclass(frozen=True)
class DeltaRow:
    env: str
    eps_g: float
    delta_g: float
    mean_delta: float
    var_delta: float
    best_baseline: str


@dataclass(frozen=True)
class DeltaResult(GridRowSet):
    """Per-cell gap between the recommended estimator and the ideal baseline."""

    rows: tuple[DeltaRow, ...]


def _derive(root: int, *tags) -> int:
    state = child_seed(root, *tags).generate_state(2)
    return int(state[0]) + (int(state[1]) << 32)


@dataclass(frozen=True)
class _PreparedPair:
    problem: EvaluationProblem
    pib_plus: AugmentedBehaviorPolicy
    truth: float
    pair_id: tuple[str, str]


@dataclass(frozen=True)
class _Prepared:
    config: ExperimentConfig
    env: EnvSpec
    scheme: WeightScheme
    pairs: tuple[_PreparedPair, ...]


def _prepare(config: ExperimentConfig) -> _Prepared:
    env = build_env(config.env, misspecify=config.misspecified_reward, **config.options_dict)
    suite: PolicySuite = policy_suite(config.env, env.n_contexts)
    indices = config.pair_indices or tuple(range(len(suite)))
    availability_model = AnnotationModel.constant(env, availability=config.availability)
    scheme = WeightScheme.equal(availability_model)
    pairs = []
    for idx in indices:
        pi_b, pi_e = suite.pairs[idx]
        problem = EvaluationProblem(env, pi_b, pi_e)
        pib_plus = augmented_behavior_policy(pi_b, scheme)
        if config.ground_truth == "exact":
            truth = policy_value_exact(env, pi_e)
        else:
            truth = policy_value_mc(
                env, pi_e, config.ground_truth_samples, _derive(config.seed, "truth", idx)
            )
        name_b = pi_b.name or f"pi_b{idx // 3}"
        name_e = pi_e.name or f"pi_e{idx % 3}"
        pairs.append(_PreparedPair(problem, pib_plus, truth, (name_b, name_e)))
    return _Prepared(config, env, scheme, tuple(pairs))


def _fit_factual(kind: str, data: Dataset, env: EnvSpec, well_specified: bool) -> RewardModel:
    if kind == "linear":
        return fit_linear(data, env, well_specified=well_specified)
    return fit_tabular_mean(data, env, well_specified=well_specified)


def _fit_augmented(kind: str, aug, env: EnvSpec, well_specified: bool) -> RewardModel:
    if kind == "linear":
        return fit_linear(aug, env, well_specified=well_specified)
    if kind == "tabular-weighted":
        return fit_tabular_weighted_mean(aug, env, well_specified=well_specified)
    return fit_tabular_mean(aug, env, well_specified=well_specified)


@dataclass(frozen=True)
class _TrialData:
    """Everything one trial produced, before estimators run."""

    d_eval: Dataset
    aug_eval: object
    model: RewardModel
    model_plus: RewardModel


def _run_trial_data(
    prep: _Prepared, eps: float, delta: float, pair_index: int, trial_index: int
) -> _TrialData:
    config, env = prep.config, prep.env
    pair = prep.pairs[pair_index]
    root = config.seed
    tags = (config.env, eps, delta, pair_index, trial_index)
    annotation_model = AnnotationModel.constant(env, eps, delta, config.availability)

    d_eval = sample_dataset(pair.problem, config.n, _derive(root, "eval-data", *tags))
    aug_eval = assign_weights(
        annotate(d_eval, env, annotation_model, _derive(root, "eval-annotations", *tags)),
        prep.scheme,
    )

    d_fit = sample_dataset(pair.problem, config.n, _derive(root, "fit-data", *tags))
    aug_fit = annotate(d_fit, env, annotation_model, _derive(root, "fit-annotations", *tags))
    if config.reward_model == "tabular-weighted":
        aug_fit = assign_weights(aug_fit, prep.scheme)
    observed = env.observed_contexts(
        d_fit.contexts, child_rng(_derive(root, "fit-observe", *tags))
    )
    if observed is not d_fit.contexts:
        d_fit = d_fit.with_contexts(observed)
        aug_fit = replace(aug_fit, dataset=d_fit)

    well = not config.misspecified_reward
    model = _fit_factual(config.reward_model, d_fit, env, well)
    model_plus = _fit_augmented(config.reward_model, aug_fit, env, well)
    return _TrialData(d_eval, aug_eval, model, model_plus)


def _evaluate(
    prep: _Prepared,
    data: _TrialData,
    pair_index: int,
    estimators: tuple[EstimatorId, ...],
    require_coverage: bool = True,
) -> dict[EstimatorId, Union[Estimate, TrialFailure]]:
    env = prep.env
    pair = prep.pairs[pair_index]
    problem, pib_plus = pair.problem, pair.pib_plus
    pi_e = problem.pi_e
    out: dict[EstimatorId, Union[Estimate, TrialFailure]] = {}
    for est in estimators:
        try:
            if est is EstimatorId.IS:
                res = estimate_is(data.d_eval, problem, require_coverage=require_coverage)
            elif est is EstimatorId.DM:
                res = estimate_dm(data.model, env, pi_e)
            elif est is EstimatorId.DM_PLUS:
                res = estimate_dm_plus(data.model_plus, env, pi_e)
            elif est is EstimatorId.IS_PLUS:
                res = estimate_is_plus(
                    data.aug_eval, pi_e, pib_plus, require_coverage=require_coverage
                )
            elif est is EstimatorId.DM_IS:
                res = estimate_dr(
                    data.d_eval, data.model, problem, require_coverage=require_coverage
                )
            elif est is EstimatorId.DM_PLUS_IS:
                res = estimate_dm_plus_is(
                    data.d_eval, data.model_plus, problem, require_coverage=require_coverage
                )
            elif est is EstimatorId.DM_IS_PLUS:
                res = estimate_dm_is_plus(
                    data.aug_eval, data.model, pi_e, pib_plus, require_coverage=require_coverage
                )
            elif est is EstimatorId.DM_PLUS_IS_PLUS:
                res = estimate_dm_plus_is_plus(
                    data.aug_eval, data.model_plus, pi_e, pib_plus,
                    require_coverage=require_coverage,
                )
            elif est is EstimatorId.NAIVE_DR:
                res = estimate_naive_dr(
                    data.aug_eval, data.model_plus, problem, require_coverage=require_coverage
                )
            else:  # pragma: no cover
                raise ValueError(f"unhandled estimator {est}")
            out[est] = res
        except CoverageViolation as exc:
            out[est] = TrialFailure(str(exc))
    return out


def run_trial(
    config: ExperimentConfig, cell: tuple[float, float], trial_index: int
) -> dict[tuple[str, str], dict[EstimatorId, Union[Estimate, TrialFailure]]]:
    """One fully deterministic trial of every estimator on every policy pair.

    Coverage violations come back as :class:`TrialFailure` entries rather
    than exceptions.
    """
    prep = _prepare(config)
    eps, delta = cell
    out = {}
    for pair_index, pair in enumerate(prep.pairs):
        data = _run_trial_data(prep, eps, delta, pair_index, trial_index)
        out[pair.pair_id] = _evaluate(prep, data, pair_index, config.estimators)
    return out


def run_single_estimator_trials(
    estimator_id: EstimatorId,
    config: ExperimentConfig,
    trials: int,
    seed: int,
    cell: Optional[tuple[float, float]] = None,
    pair_index: int = 0,
) -> np.ndarray:
    """Trial values of one estimator on one cell; raises on any failure."""
    estimator_id = EstimatorId(estimator_id)
    config = replace(config, seed=seed, estimators=(estimator_id,))
    prep = _prepare(config)
    eps, delta = cell if cell is not None else (0.0, 0.0)
    values = np.empty(trials)
    for t in range(trials):
        data = _run_trial_data(prep, eps, delta, pair_index, t)
        res = _evaluate(prep, data, pair_index, (estimator_id,))[estimator_id]
        if isinstance(res, TrialFailure):
            raise CoverageViolation(res.reason)
        values[t] = res.value
    return values


def _metrics(values: np.ndarray, truth: float) -> tuple[float, float, float]:
    bias = float(values.mean() - truth)
    std = float(values.std())
    rmse = float(np.sqrt(np.mean((values - truth) ** 2)))
    return rmse, bias, std


def _bootstrap_ses(
    values: np.ndarray, truth: float, resamples: int, rng: np.random.Generator
) -> tuple[float, float, float]:
    if values.size < 2 or resamples < 2:
        return 0.0, 0.0, 0.0
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    draws = values[idx]
    means = draws.mean(axis=1)
    stds = draws.std(axis=1)
    rmses = np.sqrt(((draws - truth) ** 2).mean(axis=1))
    return float(rmses.std()), float(means.std()), float(stds.std())


def run_grid(config: ExperimentConfig) -> GridResult:
    """Full sweep over (bias, variance) cells, policy pairs, and estimators.

    Emits one row per (cell, pair, estimator) with at least one successful
    trial, plus rows averaged across pairs (pi_b = pi_e = 'avg').
    """
    prep = _prepare(config)
    estimators = config.estimators
    cells = [(eps, delta) for eps in config.eps_grid for delta in config.delta_grid]

    def one_trial(task):
        cell_i, pair_i, trial_i = task
        eps, delta = cells[cell_i]
        data = _run_trial_data(prep, eps, delta, pair_i, trial_i)
        return task, _evaluate(prep, data, pair_i, estimators)

    tasks = [
        (cell_i, pair_i, trial_i)
        for cell_i in range(len(cells))
        for pair_i in range(len(prep.pairs))
        for trial_i in range(config.trials)
    ]
    results: dict[tuple[int, int, int], dict] = {}
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for task, res in pool.map(one_trial, tasks):
                results[task] = res
    else:
        for task in tasks:
            key, res = one_trial(task)
            results[key] = res

    rows: list[GridRow] = []
    for cell_i, (eps, delta) in enumerate(cells):
        for est in estimators:
            per_pair: list[GridRow] = []
            for pair_i, pair in enumerate(prep.pairs):
                vals = np.array(
                    [
                        results[(cell_i, pair_i, t)][est].value
                        for t in range(config.trials)
                        if isinstance(results[(cell_i, pair_i, t)][est], Estimate)
                    ]
                )
                if vals.size == 0:
                    continue
                rmse, bias, std = _metrics(vals, pair.truth)
                ses = _bootstrap_ses(
                    vals,
                    pair.truth,
                    config.bootstrap,
                    child_rng(config.seed, "bootstrap", eps, delta, pair_i, est.value),
                )
                per_pair.append(
                    GridRow(
                        config.env, pair.pair_id[0], pair.pair_id[1], est.value,
                        eps, delta, rmse, bias, std, *ses, vals.size,
                    )
                )
            rows.extend(per_pair)
            if per_pair:
                k = len(per_pair)
                rows.append(
                    GridRow(
                        config.env, "avg", "avg", est.value, eps, delta,
                        float(np.mean([r.rmse for r in per_pair])),
                        float(np.mean([r.bias for r in per_pair])),
                        float(np.mean([r.std for r in per_pair])),
                        float(np.sqrt(sum(r.se_rmse**2 for r in per_pair)) / k),
                        float(np.sqrt(sum(r.se_bias**2 for r in per_pair)) / k),
                        float(np.sqrt(sum(r.se_std**2 for r in per_pair)) / k),
                        sum(r.trials for r in per_pair),
                    )
                )
    return GridResult(tuple(rows))


def delta_analysis(config: ExperimentConfig) -> DeltaResult:
    """Gap between always choosing the robust DR variant and the ideal baseline.

    Per cell and trial, the recommended estimator (augmented-model DR, run
    regardless of coverage) is compared against the best-case baseline: the
    plain direct method with a well-specified model, or its augmented
    version when the cell's annotations are perfect.  Deltas are pooled over
    policy pairs.
    """
    prep = _prepare(config)
    clean_config = replace(
        config,
        misspecified_reward=False,
        reward_model=_ENV_DEFAULTS[config.env]["reward_model"],
    )
    prep_clean = _prepare(clean_config)

    rows: list[DeltaRow] = []
    for eps in config.eps_grid:
        for delta in config.delta_grid:
            perfect = eps == 0.0 and delta == 0.0
            baseline_id = EstimatorId.DM_PLUS if perfect else EstimatorId.DM
            gaps: list[float] = []
            for pair_i in range(len(prep.pairs)):
                for t in range(config.trials):
                    data = _run_trial_data(prep, eps, delta, pair_i, t)
                    chosen = _evaluate(
                        prep, data, pair_i, (EstimatorId.DM_PLUS_IS,), require_coverage=False
                    )[EstimatorId.DM_PLUS_IS]
                    clean = _run_trial_data(prep_clean, eps, delta, pair_i, t)
                    base = _evaluate(prep_clean, clean, pair_i, (baseline_id,))[baseline_id]
                    if isinstance(chosen, TrialFailure) or isinstance(base, TrialFailure):
                        continue
                    gaps.append(chosen.value - base.value)
            arr = np.array(gaps)
            rows.append(
                DeltaRow(
                    config.env, eps, delta,
                    float(arr.mean()), float(arr.var()), baseline_id.value,
                )
            )
    return DeltaResult(tuple(rows))


_GRID_COLUMNS = (
    "env", "pi_b", "pi_e", "estimator", "eps_g", "delta_g",
    "rmse", "bias", "std", "se_rmse", "se_bias", "se_std", "trials",
)
_DELTA_COLUMNS = ("env", "eps_g", "delta_g", "mean_delta", "var_delta", "best_baseline")
_FLOAT_FORMAT = "%.17g"


def _format_value(value) -> str:
    if isinstance(value, float):
        return _FLOAT_FORMAT % value
    return str(value)


def export(result: Union[GridResult, DeltaResult], fmt: str, path: Union[str, Path]) -> Path:
    """Write a result to CSV or JSON; returns the path written."""
    if not result.rows:
        raise ValueError("refusing to export an empty result")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown export format {fmt!r}")
    columns = _GRID_COLUMNS if isinstance(result, GridResult) else _DELTA_COLUMNS
    path = Path(path)
    try:
        if fmt == "csv":
            with path.open("w", encoding="utf-8", newline="") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(columns)
                for row in result.rows:
                    record = asdict(row)
                    writer.writerow([_format_value(record[c]) for c in columns])
        else:
            payload = [
                {c: (float(_FLOAT_FORMAT % v) if isinstance(v, float) else v)
                 for c, v in ((c, asdict(row)[c]) for c in columns)}
                for row in result.rows
            ]
            with path.open("w", encoding="utf-8") as handle:
                json.dump(payload, handle, indent=1)
                handle.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def _row_from_record(record: dict, kind: str):
    if kind == "grid":
        return GridRow(
            str(record["env"]), str(record["pi_b"]), str(record["pi_e"]),
            str(record["estimator"]), float(record["eps_g"]), float(record["delta_g"]),
            float(record["rmse"]), float(record["bias"]), float(record["std"]),
            float(record["se_rmse"]), float(record["se_bias"]), float(record["se_std"]),
            int(record["trials"]),
        )
    return DeltaRow(
        str(record["env"]), float(record["eps_g"]), float(record["delta_g"]),
        float(record["mean_delta"]), float(record["var_delta"]), str(record["best_baseline"]),
    )


def load_grid(path: Union[str, Path], kind: str = "grid") -> Union[GridResult, DeltaResult]:
    """Re-import an exported result (CSV by suffix .csv, else JSON)."""
    path = Path(path)
    try:
        if path.suffix == ".csv":
            with path.open("r", encoding="utf-8", newline="") as handle:
                records = list(csv.DictReader(handle))
        else:
            with path.open("r", encoding="utf-8") as handle:
                records = json.load(handle)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    rows = tuple(_row_from_record(r, kind) for r in records)
    return GridResult(rows) if kind == "grid" else DeltaResult(rows)
