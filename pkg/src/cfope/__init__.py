"""Off-policy evaluation for contextual bandits with counterfactual annotations.

The package provides:

* core bandit types and dataset sampling (:mod:`cfope.core`),
* counterfactual annotation generation and the augmented logging policy
  (:mod:`cfope.annotations`),
* reward-model fitting (:mod:`cfope.rewards`),
* nine policy-value estimators (:mod:`cfope.estimators`),
* three benchmark environments (:mod:`cfope.environments`),
* closed-form bias/variance oracles (:mod:`cfope.oracle`),
* the experiment grid harness and CLI (:mod:`cfope.harness`, :mod:`cfope.cli`).
"""

from .annotations import (
    AnnotationModel,
    AnnotationSet,
    AugmentedBehaviorPolicy,
    AugmentedDataset,
    AugmentedSample,
    WeightScheme,
    annotate,
    assign_weights,
    augmented_behavior_policy,
    augmented_ips_ratio,
    mean_weight,
)
from .core import (
    Dataset,
    EnvSpec,
    EvaluationProblem,
    FactualSample,
    Policy,
    ips_ratio,
    policy_value_exact,
    policy_value_mc,
    sample_dataset,
)
from .environments import (
    HeartstepsConfig,
    PolicySuite,
    SepsisConfig,
    TwoContextConfig,
    build_env,
    build_heartsteps,
    build_sepsis,
    build_two_context,
    policy_suite,
)
from .errors import (
    ConfigError,
    CoverageViolation,
    DegenerateSupport,
    IoError,
    RealizabilityViolation,
    WeightSumViolation,
)
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
from .harness import (
    DeltaResult,
    ExperimentConfig,
    GridResult,
    TrialFailure,
    default_config,
    delta_analysis,
    export,
    load_grid,
    run_grid,
    run_trial,
)
from .oracle import (
    ClosedFormReport,
    EmpiricalMoments,
    RewardModelErrorProfile,
    dm_is_plus_bias,
    dm_is_plus_variance_perfect,
    dm_plus_is_variance,
    dm_variance,
    dr_variance,
    empirical_moments,
    is_variance,
)
from .rewards import (
    FitReport,
    RewardModel,
    fit_linear,
    fit_tabular_mean,
    fit_tabular_weighted_mean,
    predict_policy,
)

__version__ = "0.1.0"
