"""
Parametric working models solved as estimating equations.

Every fit keeps what the influence-function corrections need: the per-unit
scores S_j(theta) over the whole view (zero for units outside an outcome
model's arm) and the bread, the weighted mean of dS/dtheta^T. Both are
analytic; nothing here differentiates numerically.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from scipy import linalg
from scipy.special import expit

from .data import CovariateSet, DatasetView
from .errors import DataError, EstimationWarning, NumericalError

SCORE_TOLERANCE = 1e-8
MAX_ITERATIONS = 100
MAX_HALVINGS = 40
SEPARATION_EPS = 1e-10


class ModelKind(StrEnum):
    PROPENSITY_LOGISTIC = "propensity_logistic"
    OUTCOME_LINEAR = "outcome_linear"
    OUTCOME_LOGISTIC = "outcome_logistic"


@dataclass(frozen=True)
class ModelSpec:
    """
    Working model specification.

    Attributes:
        kind: Model family and role
        covariate_set: Regress on (X, U) or X alone
        arm: Treatment arm an outcome model is fitted on; None for the
            propensity model
        include_intercept: Prepend a constant column
    """

    kind: ModelKind
    covariate_set: CovariateSet = CovariateSet.XU
    arm: int | None = None
    include_intercept: bool = True

    def __post_init__(self) -> None:
        if self.is_outcome != (self.arm is not None):
            raise ValueError("arm must be given exactly for outcome models")
        if self.arm is not None and self.arm not in (0, 1):
            raise ValueError("arm must be 0 or 1")

    @property
    def is_outcome(self) -> bool:
        return self.kind is not ModelKind.PROPENSITY_LOGISTIC

    @property
    def logistic(self) -> bool:
        return self.kind is not ModelKind.OUTCOME_LINEAR


@dataclass(frozen=True, eq=False)
class ModelFit:
    """
    Solved working model.

    Attributes:
        spec: The specification that was fitted
        coefficients: theta-hat, intercept first when present
        scores: (n, k) per-unit scores S_j(theta-hat) over the view
        bread: (k, k) weighted mean of dS/dtheta^T over the view
        converged: Solver reached the score tolerance
        iterations: Newton iterations used (0 for closed-form fits)
        weights_used: Per-unit weights of the estimating equation
        names: Coefficient names
        separated: Fitted probabilities hit 0 or 1 (logistic fits only)
    """

    spec: ModelSpec
    coefficients: np.ndarray
    scores: np.ndarray
    bread: np.ndarray
    converged: bool
    iterations: int
    weights_used: np.ndarray
    names: tuple[str, ...] = ()
    separated: bool = False

    @property
    def dim(self) -> int:
        return int(self.coefficients.shape[0])

    def _regressors(self, covariates: np.ndarray) -> np.ndarray:
        covariates = np.asarray(covariates, dtype=float)
        expected = self.dim - int(self.spec.include_intercept)
        if covariates.shape[-1] != expected:
            raise ValueError(
                f"model expects {expected} covariates, "
                f"got {covariates.shape[-1]}"
            )
        if self.spec.include_intercept:
            ones = np.ones(covariates.shape[:-1] + (1,))
            covariates = np.concatenate([ones, covariates], axis=-1)
        return covariates

    def linear_predictor(self, covariates: np.ndarray) -> np.ndarray:
        return self._regressors(covariates) @ self.coefficients

    def predict(self, covariates: np.ndarray) -> np.ndarray:
        """Fitted mean for each row of ``covariates``."""
        eta = self.linear_predictor(covariates)
        return expit(eta) if self.spec.logistic else eta

    def derivative(self, covariates: np.ndarray) -> np.ndarray:
        """d(mean)/d(theta) per row, shape (n, k)."""
        design = self._regressors(np.atleast_2d(covariates))
        if not self.spec.logistic:
            return design
        mu = expit(design @ self.coefficients)
        return design * (mu * (1.0 - mu))[:, None]

    def correction(self, gradient: np.ndarray) -> np.ndarray:
        """
        Per-unit contribution of estimating theta to an estimator.

        For an estimator whose plug-in depends on theta with averaged
        gradient ``gradient`` (shape (k,)), returns
        ``-gradient @ bread^{-1} @ S_j`` for every unit j.
        """
        gradient = np.asarray(gradient, dtype=float)
        h = linalg.solve(self.bread.T, gradient)
        return -(self.scores @ h)


def design_matrix(
    view: DatasetView, covariate_set: CovariateSet, include_intercept: bool
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Regressor matrix and column names for a view."""
    covariates = view.covariates(covariate_set)
    names = view.covariate_names(covariate_set)
    if not names:
        names = tuple(f"c{i + 1}" for i in range(covariates.shape[1]))
    if include_intercept:
        covariates = np.hstack([np.ones((view.n, 1)), covariates])
        names = ("intercept",) + tuple(names)
    return covariates, tuple(names)


def _check_weights(view: DatasetView, weights: np.ndarray | None) -> np.ndarray:
    if weights is None:
        return view.weights
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (view.n,):
        raise ValueError("weights must have one entry per unit")
    if (weights <= 0).any():
        raise ValueError("weights must be strictly positive")
    return weights


def _collinear_columns(design: np.ndarray, names: tuple[str, ...]) -> list[str]:
    kept: list[int] = []
    dropped: list[str] = []
    for j in range(design.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(design[:, trial]) == len(trial):
            kept = trial
        else:
            dropped.append(names[j])
    return dropped


def _log_likelihood(
    design: np.ndarray, target: np.ndarray, w: np.ndarray, theta: np.ndarray
) -> float:
    eta = design @ theta
    # log(1 + e^eta) computed stably
    return float(np.sum(w * (target * eta - np.logaddexp(0.0, eta))))


def _solve_logistic(
    design: np.ndarray, target: np.ndarray, w: np.ndarray
) -> tuple[np.ndarray, int, bool, bool]:
    """
    Damped Newton-Raphson for a weighted logistic likelihood.

    Returns (theta, iterations, converged, separated).
    """
    total = w.sum()
    theta = np.zeros(design.shape[1])
    loglik = _log_likelihood(design, target, w, theta)
    separated = False

    for iteration in range(1, MAX_ITERATIONS + 1):
        mu = expit(design @ theta)
        score = design.T @ (w * (target - mu)) / total
        if np.max(np.abs(score)) < SCORE_TOLERANCE:
            return theta, iteration - 1, True, separated

        hessian = (design * (w * mu * (1.0 - mu))[:, None]).T @ design / total
        try:
            step = linalg.solve(hessian, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError) as err:
            if separated:
                break
            raise NumericalError(
                "singular Hessian in logistic fit"
            ) from err
        if not np.all(np.isfinite(step)):
            raise NumericalError("singular Hessian in logistic fit")

        scale = 1.0
        for _ in range(MAX_HALVINGS):
            candidate = theta + scale * step
            candidate_loglik = _log_likelihood(design, target, w, candidate)
            if candidate_loglik >= loglik:
                break
            scale *= 0.5
        else:
            # No ascent possible at machine precision: stationary point
            return theta, iteration, True, separated

        theta, loglik = candidate, candidate_loglik
        fitted = expit(design @ theta)
        separated = bool(
            np.any(fitted < SEPARATION_EPS)
            or np.any(fitted > 1.0 - SEPARATION_EPS)
        )

    mu = expit(design @ theta)
    score = design.T @ (w * (target - mu)) / total
    converged = bool(np.max(np.abs(score)) < SCORE_TOLERANCE)
    return theta, MAX_ITERATIONS, converged, separated


def _logistic_fit(
    spec: ModelSpec,
    design: np.ndarray,
    names: tuple[str, ...],
    target: np.ndarray,
    in_model: np.ndarray,
    w: np.ndarray,
) -> ModelFit:
    if np.linalg.matrix_rank(design[in_model]) < design.shape[1]:
        raise NumericalError(
            "rank-deficient design; collinear columns: "
            + ", ".join(_collinear_columns(design[in_model], names))
        )
    theta, iterations, converged, separated = _solve_logistic(
        design[in_model], target[in_model], w[in_model]
    )
    mu = expit(design @ theta)
    if separated or np.any(mu[in_model] < SEPARATION_EPS) or np.any(
        mu[in_model] > 1.0 - SEPARATION_EPS
    ):
        separated = True
        warnings.warn(
            f"quasi-complete separation in {spec.kind} fit: fitted "
            "probabilities reach 0 or 1",
            EstimationWarning,
            stacklevel=3,
        )
    elif not converged:
        raise NumericalError(
            f"{spec.kind} fit did not converge in {MAX_ITERATIONS} iterations"
        )

    indicator = in_model.astype(float)
    scores = design * (indicator * (target - mu))[:, None]
    curvature = w * indicator * mu * (1.0 - mu)
    bread = -(design * curvature[:, None]).T @ design / w.sum()
    return ModelFit(
        spec=spec,
        coefficients=theta,
        scores=scores,
        bread=bread,
        converged=converged,
        iterations=iterations,
        weights_used=w,
        names=names,
        separated=separated,
    )


def fit_logistic_propensity(
    view: DatasetView, spec: ModelSpec, weights: np.ndarray | None = None
) -> ModelFit:
    """
    Fit the propensity score model by weighted maximum likelihood.

    Args:
        view: Units to fit on
        spec: A PROPENSITY_LOGISTIC specification
        weights: Positive per-unit weights; the view's survey weights when
            omitted

    Returns:
        The solved fit. Scores are x_j (A_j - e_j).

    Raises:
        NumericalError: Non-convergence or a singular Hessian
    """
    if spec.kind is not ModelKind.PROPENSITY_LOGISTIC:
        raise ValueError("fit_logistic_propensity needs a propensity spec")
    w = _check_weights(view, weights)
    design, names = design_matrix(
        view, spec.covariate_set, spec.include_intercept
    )
    target = view.treatment.astype(float)
    return _logistic_fit(
        spec, design, names, target, np.ones(view.n, dtype=bool), w
    )


def fit_outcome(
    view: DatasetView, spec: ModelSpec, weights: np.ndarray | None = None
) -> ModelFit:
    """
    Fit an outcome regression on the units of one treatment arm.

    Linear models are solved in closed form from the weighted normal
    equations; logistic models use the same Newton solver as the
    propensity model.

    Raises:
        DataError: The arm has fewer units than coefficients, or a logistic
            outcome is not in [0, 1]
        NumericalError: Rank-deficient design (the message names the
            collinear columns) or non-convergence
    """
    if not spec.is_outcome:
        raise ValueError("fit_outcome needs an outcome spec")
    w = _check_weights(view, weights)
    design, names = design_matrix(
        view, spec.covariate_set, spec.include_intercept
    )
    in_arm = view.treatment == spec.arm
    k = design.shape[1]
    if in_arm.sum() < k:
        raise DataError(
            f"arm {spec.arm} has {int(in_arm.sum())} units but the outcome "
            f"model has {k} coefficients"
        )

    if spec.kind is ModelKind.OUTCOME_LOGISTIC:
        y = view.outcome
        if (y < 0).any() or (y > 1).any():
            raise DataError("logistic outcome model needs outcomes in [0, 1]")
        return _logistic_fit(spec, design, names, y, in_arm, w)

    xa = design[in_arm]
    wa = w[in_arm]
    if np.linalg.matrix_rank(xa * np.sqrt(wa)[:, None]) < k:
        raise NumericalError(
            "rank-deficient design; collinear columns: "
            + ", ".join(_collinear_columns(xa, names))
        )
    gram = (xa * wa[:, None]).T @ xa
    beta = linalg.solve(
        gram, xa.T @ (wa * view.outcome[in_arm]), assume_a="pos"
    )

    indicator = in_arm.astype(float)
    residual = view.outcome - design @ beta
    scores = design * (indicator * residual)[:, None]
    bread = -(design * (w * indicator)[:, None]).T @ design / w.sum()
    return ModelFit(
        spec=spec,
        coefficients=beta,
        scores=scores,
        bread=bread,
        converged=True,
        iterations=0,
        weights_used=w,
        names=names,
    )


def fit_model(
    view: DatasetView, spec: ModelSpec, weights: np.ndarray | None = None
) -> ModelFit:
    """Dispatch on ``spec.kind``."""
    if spec.is_outcome:
        return fit_outcome(view, spec, weights)
    return fit_logistic_propensity(view, spec, weights)


def predict(fit: ModelFit, covariates) -> float | np.ndarray:
    """
    Evaluate a fitted model.

    Args:
        fit: A solved model
        covariates: One unit's covariates (1-D, without the intercept) or
            a matrix with one unit per row

    Returns:
        A float for a single unit, otherwise an array

    Raises:
        ValueError: Covariate dimension does not match the model
    """
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        return float(fit.predict(covariates[None, :])[0])
    return fit.predict(covariates)
