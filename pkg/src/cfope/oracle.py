"""Closed-form expectations and variances for the estimators, plus a brute-force
empirical-moments driver.

Each closed form is reported as named terms whose sum is the total, so tests
can check individual pieces.  Variance reports for the ratio-based estimators
are on the N-times-variance scale (the per-sample scale the decompositions
are naturally written in); the direct-method variance is on the plain
variance scale and depends on the dataset sizes explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .annotations import AnnotationModel, WeightScheme, augmented_behavior_policy
from .core import EvaluationProblem, _frozen, context_value, ratio_table
from .errors import CoverageViolation, RealizabilityViolation
from .rewards import RewardModel

__all__ = [
    "RewardModelErrorProfile",
    "ClosedFormReport",
    "EmpiricalMoments",
    "is_variance",
    "dr_variance",
    "dm_variance",
    "dm_is_plus_bias",
    "dm_plus_is_variance",
    "dm_is_plus_variance_perfect",
    "empirical_moments",
]


@dataclass(frozen=True)
class RewardModelErrorProfile:
    """First two moments of a fitted reward model around the truth.

    ``mean_error[s, a]`` is E[model(s, a)] - mean_reward(s, a) over refits;
    ``fit_variance[s, a]`` is the refit variance.  A frozen model has zero
    fit variance and mean error equal to its pointwise error.
    """

    mean_error: np.ndarray
    fit_variance: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean_error", _frozen(self.mean_error))
        object.__setattr__(self, "fit_variance", _frozen(self.fit_variance))
        if self.mean_error.shape != self.fit_variance.shape:
            raise ValueError("profile tables must share one shape")
        if (self.fit_variance < 0).any():
            raise ValueError("fit_variance must be nonnegative")

    def policy_mean_error(self, pi_e_probs: np.ndarray) -> np.ndarray:
        """Per-context target-policy average of the mean error."""
        return (pi_e_probs * self.mean_error).sum(axis=1)

    @classmethod
    def frozen_model(cls, model: RewardModel, mean_reward: np.ndarray) -> "RewardModelErrorProfile":
        return cls(model.table - mean_reward, np.zeros_like(mean_reward))


@dataclass(frozen=True)
class ClosedFormReport:
    """Named decomposition terms; ``total`` is their sum."""

    terms: tuple[tuple[str, float], ...]

    @property
    def total(self) -> float:
        return float(sum(v for _, v in self.terms))

    def term(self, name: str) -> float:
        for key, value in self.terms:
            if key == name:
                return value
        raise KeyError(name)

    def as_dict(self) -> dict[str, float]:
        return dict(self.terms)


def _check_covered(problem: EvaluationProblem) -> None:
    if not problem.covered:
        raise CoverageViolation("closed form needs logging-policy coverage")


def _context_value_variance(problem: EvaluationProblem) -> float:
    v = context_value(problem.env, problem.pi_e)
    d0 = problem.env.d0
    return float(d0 @ v**2 - (d0 @ v) ** 2)


def _ratio_core(
    problem: EvaluationProblem, centered_on: np.ndarray
) -> tuple[float, float, float]:
    """The three per-sample variance pieces shared by IS and DR.

    ``centered_on`` is the (S, A) table the ratio term multiplies: the mean
    reward for IS, the model residual for DR.
    """
    env = problem.env
    d0, pb = env.d0, problem.pi_b.probs
    rho = ratio_table(problem.pi_e.probs, pb)
    t1 = _context_value_variance(problem)
    m = rho * centered_on
    per_ctx = (pb * m**2).sum(axis=1) - ((pb * m).sum(axis=1)) ** 2
    t2 = float(d0 @ per_ctx)
    t3 = float(d0 @ (pb * rho**2 * env.reward_std**2).sum(axis=1))
    return t1, t2, t3


def is_variance(problem: EvaluationProblem) -> ClosedFormReport:
    """N times the variance of the importance-sampling estimator."""
    _check_covered(problem)
    t1, t2, t3 = _ratio_core(problem, problem.env.mean_reward)
    return ClosedFormReport(
        (
            ("context_value_spread", t1),
            ("ratio_weighted_mean_spread", t2),
            ("ratio_weighted_reward_noise", t3),
        )
    )


def dr_variance(problem: EvaluationProblem, model: RewardModel) -> ClosedFormReport:
    """N times the variance of doubly robust with a frozen reward model."""
    _check_covered(problem)
    t1, t2, t3 = _ratio_core(problem, problem.env.mean_reward - model.table)
    return ClosedFormReport(
        (
            ("context_value_spread", t1),
            ("ratio_weighted_residual_spread", t2),
            ("ratio_weighted_reward_noise", t3),
        )
    )


def _inverse_count_mean(n: int, p: np.ndarray) -> np.ndarray:
    """E[1/K | K > 0] for K ~ Binomial(n, p), elementwise and exact.

    Cell counts of a multinomial dataset are marginally binomial, so the
    exact expectation is a finite sum; no enumeration cutoff is needed.
    """
    k = np.arange(1, n + 1)
    pmf = stats.binom.pmf(k[None, :], n, p.reshape(-1, 1))
    nonzero = 1.0 - np.power(1.0 - p.reshape(-1), n)
    out = (pmf / k[None, :]).sum(axis=1) / np.maximum(nonzero, 1e-300)
    return out.reshape(p.shape)


def dm_variance(
    problem: EvaluationProblem, n_eval: int, n_fit: Optional[int] = None
) -> ClosedFormReport:
    """Variance of the sample-averaged direct method with a tabular fit.

    Covers the two-dataset protocol: contexts come from an evaluation
    dataset of size ``n_eval`` while the tabular model is fitted on an
    independent dataset of size ``n_fit`` drawn from the same logging
    policy.  Cell-count reciprocals are conditioned on the cell being
    visited.

    Raises
    ------
    RealizabilityViolation
        If some cell the target policy needs can never be visited.
    """
    n_fit = n_eval if n_fit is None else n_fit
    env = problem.env
    d0, pe, pb = env.d0, problem.pi_e.probs, problem.pi_b.probs
    p_cell = d0[:, None] * pb
    required = (d0[:, None] * pe) > 0
    if (required & (p_cell <= 0)).any():
        raise RealizabilityViolation("a required cell has zero visit probability")

    e_inv = np.zeros_like(p_cell)
    e_inv[required] = _inverse_count_mean(n_fit, p_cell[required])

    t1 = _context_value_variance(problem) / n_eval
    size_factor = 1.0 / n_eval + (1.0 - 1.0 / n_eval) * d0[:, None]
    t2 = float((d0[:, None] * pe**2 * size_factor * env.reward_std**2 * e_inv).sum())
    return ClosedFormReport(
        (("context_value_spread", t1), ("fit_noise", t2))
    )


def dm_is_plus_bias(
    problem: EvaluationProblem, scheme: WeightScheme, model: AnnotationModel
) -> float:
    """Expected bias of the augmented-correction DR estimators.

    Evaluates E_{s~d0, a~pi_e}[(1 - Wbar(a|s,a) pi_b(a|s)/pi_b_plus(a|s))
    * annotation_bias(s, a)].  Zero annotation bias gives zero.
    """
    env = problem.env
    pib_plus = augmented_behavior_policy(problem.pi_b, scheme).probs
    pe, pb = problem.pi_e.probs, problem.pi_b.probs
    if ((pe > 0) & (pib_plus <= 0)).any():
        raise CoverageViolation("augmented logging policy misses target support")
    w_diag = np.einsum("saa->sa", scheme.mean_weight)
    keep = np.zeros_like(pe)
    np.divide(w_diag * pb, pib_plus, out=keep, where=pib_plus > 0)
    return float((env.d0[:, None] * pe * (1.0 - keep) * model.bias).sum())


def dm_plus_is_variance(
    problem: EvaluationProblem, profile: RewardModelErrorProfile
) -> ClosedFormReport:
    """N times the variance of DR-with-augmented-model under an error profile.

    The four terms follow the imperfect-annotation decomposition: context
    spread, ratio-weighted reward noise, the model's mean-error quadratic,
    and the refit-variance term.
    """
    _check_covered(problem)
    env = problem.env
    d0, pe, pb = env.d0, problem.pi_e.probs, problem.pi_b.probs
    rho = ratio_table(pe, pb)
    t1 = _context_value_variance(problem)
    t2 = float(d0 @ (pb * rho**2 * env.reward_std**2).sum(axis=1))
    eps = profile.mean_error
    eps_pe = profile.policy_mean_error(pe)
    t3 = float(d0 @ ((pb * rho**2 * eps**2).sum(axis=1) - eps_pe**2))
    logged = pb > 0
    inv_pb = np.zeros_like(pb)
    np.divide(1.0, pb, out=inv_pb, where=logged)
    t4 = float(
        d0 @ (np.where(logged, pb * (rho**2 - inv_pb) * profile.fit_variance, 0.0)).sum(axis=1)
    )
    return ClosedFormReport(
        (
            ("context_value_spread", t1),
            ("ratio_weighted_reward_noise", t2),
            ("model_mean_error", t3),
            ("model_fit_variance", t4),
        )
    )


def dm_is_plus_variance_perfect(
    problem: EvaluationProblem, scheme: WeightScheme, model: RewardModel
) -> ClosedFormReport:
    """N times the variance of the augmented-correction DR estimator.

    Assumes perfect annotations and a frozen reward model.  Weight
    randomness enters through the scheme's covariance table; deterministic
    weights make those terms vanish.  With the model table identically zero
    this is exactly the augmented importance-sampling variance, which is how
    the equal-weights variance equivalence is checked.
    """
    env = problem.env
    d0, pe, pb = env.d0, problem.pi_e.probs, problem.pi_b.probs
    pib_plus = augmented_behavior_policy(problem.pi_b, scheme).probs
    if ((pe > 0) & (pib_plus <= 0)).any():
        raise CoverageViolation("augmented logging policy misses target support")
    rho_plus = ratio_table(pe, pib_plus)
    residual = env.mean_reward - model.table
    sigma2 = env.reward_std**2

    t1 = _context_value_variance(problem)

    # h[s, a_i] = sum_a rho_plus(a|s) Wbar(a|s, a_i) residual(s, a)
    h = np.einsum("sia,sa->si", scheme.mean_weight, rho_plus * residual)
    t2 = float(d0 @ ((pb * h**2).sum(axis=1) - ((pb * h).sum(axis=1)) ** 2))

    t3 = float(
        d0 @ np.einsum("si,sia,sa->s", pb, scheme.mean_weight**2, rho_plus**2 * sigma2)
    )

    if scheme.weight_covariance is None:
        t4 = 0.0
    else:
        g_diag = rho_plus**2 * (sigma2 + residual**2)
        cross = rho_plus * residual
        quad = np.einsum("sj,sk->sjk", cross, cross)
        idx = np.arange(quad.shape[1])
        quad[:, idx, idx] = g_diag
        t4 = float(d0 @ np.einsum("si,sijk,sjk->s", pb, scheme.weight_covariance, quad))

    return ClosedFormReport(
        (
            ("context_value_spread", t1),
            ("weighted_residual_spread", t2),
            ("weighted_reward_noise", t3),
            ("weight_randomness", t4),
        )
    )


@dataclass(frozen=True)
class EmpiricalMoments:
    """Monte-Carlo mean/variance of an estimator with bootstrap standard errors."""

    mean: float
    variance: float
    se_mean: float
    se_variance: float
    n_trials: int


def empirical_moments(
    estimator_id,
    config,
    trials: int,
    seed: int,
    cell: Optional[tuple[float, float]] = None,
    pair_index: int = 0,
    bootstrap: int = 500,
) -> EmpiricalMoments:
    """Repeated end-to-end trials of one estimator on one grid cell.

    This is the brute-force oracle behind the derived checks; it reuses the
    harness trial pipeline so the estimate path is exactly the production
    one.
    """
    from .harness import run_single_estimator_trials

    if trials < 2:
        raise ValueError("trials must be >= 2")
    values = run_single_estimator_trials(
        estimator_id, config, trials, seed, cell=cell, pair_index=pair_index
    )
    mean = float(values.mean())
    variance = float(values.var())
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xB007]))
    idx = rng.integers(0, values.size, size=(bootstrap, values.size))
    boot = values[idx]
    boot_means = boot.mean(axis=1)
    boot_vars = boot.var(axis=1)
    return EmpiricalMoments(
        mean,
        variance,
        float(boot_means.std()),
        float(boot_vars.std()),
        values.size,
    )
