"""
Initial and error-prone estimators with their linear expansions.

Every estimator returns an EstimateWithExpansion: the point estimate and
one expansion value per unit such that, in the estimator's own weighting,

    point - target ~= sum_j w_j expansion_j / sum_j w_j.

Expansions include the contribution of every estimated working model.
That contribution always has the M-estimation form
-E[d tau_j / d theta^T] {E dS/d theta^T}^{-1} S_j, so each estimator only
supplies its averaged gradient and ModelFit.correction does the rest.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from .data import (
    CovariateSet,
    DatasetView,
    Design,
    FusedDataset,
    main_view,
    validation_view,
)
from .errors import EstimationWarning
from .estimating import (
    ModelFit,
    ModelKind,
    ModelSpec,
    fit_logistic_propensity,
    fit_outcome,
)
from .matching import (
    DistanceScaling,
    bias_correction,
    find_matches,
    matching_estimate_raw,
)

TRIM = 1e-6


class Method(StrEnum):
    REG_IMPUTATION = "reg"
    IPW = "ipw"
    AIPW = "aipw"
    MATCHING = "match"


class DatasetRole(StrEnum):
    VALIDATION = "validation"
    MAIN = "main"


class EstimatorForm(StrEnum):
    """Normalization of the survey-weighted mean."""

    HORVITZ_THOMPSON = "horvitz_thompson"
    HAJEK = "hajek"


class Estimand(StrEnum):
    ATE = "ate"
    TREATED_MEAN = "treated_mean"
    CONTROL_MEAN = "control_mean"
    LOG_CRR = "logcrr"
    LOG_COR = "logcor"

    @property
    def is_ratio(self) -> bool:
        return self in (Estimand.LOG_CRR, Estimand.LOG_COR)

    @property
    def contrast(self) -> tuple[float, float]:
        """Coefficients (c1, c0) on E{Y(1)} and E{Y(0)}."""
        if self.is_ratio:
            raise ValueError(
                f"{self} is not linear in the arm means; estimate both arm "
                "means and combine them with fuse_ratio_estimand"
            )
        return {
            Estimand.ATE: (1.0, -1.0),
            Estimand.TREATED_MEAN: (1.0, 0.0),
            Estimand.CONTROL_MEAN: (0.0, 1.0),
        }[self]


@dataclass(frozen=True)
class EstimatorKind:
    method: Method
    covariate_set: CovariateSet
    dataset: DatasetRole

    def __post_init__(self) -> None:
        if (
            self.covariate_set is CovariateSet.XU
            and self.dataset is DatasetRole.MAIN
        ):
            raise ValueError("U is not available on the main dataset")

    @property
    def label(self) -> str:
        return f"{self.method}-{self.covariate_set}-{self.dataset}"


@dataclass(frozen=True, eq=False)
class EstimateWithExpansion:
    """
    A point estimate and its per-unit linear expansion.

    Attributes:
        kind: Method, covariate set and dataset role
        point: The estimate
        expansion: One value per unit of the estimator's view
        model_fits: Working models the estimate depends on
        weight_regime: Design of the dataset the view came from
        weights: Survey weights used for the weighted mean
        rows: Row positions of the units in the FusedDataset
        ids: Unit ids, aligned with ``expansion``
        treatment: Treatment indicators, aligned with ``expansion``
        estimand: What the point estimates
        trimmed: Number of propensities clamped away from 0 and 1
    """

    kind: EstimatorKind
    point: float
    expansion: np.ndarray
    model_fits: tuple[ModelFit, ...]
    weight_regime: Design
    weights: np.ndarray
    rows: np.ndarray
    ids: np.ndarray
    treatment: np.ndarray
    estimand: Estimand = Estimand.ATE
    trimmed: int = 0

    @property
    def n(self) -> int:
        return int(self.expansion.shape[0])

    def centering(self) -> float:
        """Weighted mean of the expansion; zero up to rounding."""
        return float(self.weights @ self.expansion / self.weights.sum())


@dataclass(frozen=True)
class EstimatorOptions:
    """
    Knobs shared by the four estimators.

    ``propensity_covariates`` and ``outcome_covariates`` override the
    covariates of the XU estimator's working models (used to fit
    deliberately wrong models); error-prone estimators always use X.
    """

    M: int = 1
    distance_scaling: DistanceScaling = DistanceScaling.RAW
    outcome_kind: ModelKind = ModelKind.OUTCOME_LINEAR
    include_intercept: bool = True
    propensity_covariates: CovariateSet | None = None
    outcome_covariates: CovariateSet | None = None
    stabilized: bool = False
    estimand: Estimand = Estimand.ATE
    include_model_correction: bool = True


# ---------------------------------------------------------------------------
# Per-unit terms
# ---------------------------------------------------------------------------


def ipw_terms(
    treatment: np.ndarray, outcome: np.ndarray, propensity: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-probability weighted terms (A Y / e, (1 - A) Y / (1 - e))."""
    a = np.asarray(treatment, dtype=float)
    y = np.asarray(outcome, dtype=float)
    e = np.asarray(propensity, dtype=float)
    return a * y / e, (1.0 - a) * y / (1.0 - e)


def aipw_terms(
    treatment: np.ndarray,
    outcome: np.ndarray,
    propensity: np.ndarray,
    mu1: np.ndarray,
    mu0: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Augmented terms whose difference is the per-unit AIPW contribution."""
    a = np.asarray(treatment, dtype=float)
    y = np.asarray(outcome, dtype=float)
    e = np.asarray(propensity, dtype=float)
    m1 = a * (y - mu1) / e + mu1
    m0 = (1.0 - a) * (y - mu0) / (1.0 - e) + mu0
    return m1, m0


def _wmean(w: np.ndarray, values: np.ndarray):
    return w @ values / w.sum()


def _resolve_weights(
    view: DatasetView, weights: np.ndarray | None, form: EstimatorForm | None
) -> np.ndarray:
    w = view.weights if weights is None else np.asarray(weights, float)
    if w.shape != (view.n,) or (w <= 0).any():
        raise ValueError("weights must be positive, one per unit")
    unit = bool((w == 1.0).all())
    if form is EstimatorForm.HORVITZ_THOMPSON and not unit:
        raise ValueError(
            "Horvitz-Thompson form needs unit weights; use the Hajek form "
            "with inclusion probabilities"
        )
    return w


def _kind(
    view: DatasetView, method: Method, covariate_set: CovariateSet
) -> EstimatorKind:
    role = DatasetRole.VALIDATION if view.is_validation else DatasetRole.MAIN
    return EstimatorKind(method, covariate_set, role)


def _propensity(view: DatasetView, fit: ModelFit) -> tuple[np.ndarray, int]:
    e = fit.predict(view.covariates(fit.spec.covariate_set))
    clipped = np.clip(e, TRIM, 1.0 - TRIM)
    trimmed = int((clipped != e).sum())
    if trimmed:
        warnings.warn(
            f"{trimmed} fitted propensities clamped to [{TRIM}, {1 - TRIM}]",
            EstimationWarning,
            stacklevel=3,
        )
    return clipped, trimmed


def _package(
    view: DatasetView,
    kind: EstimatorKind,
    point: float,
    expansion: np.ndarray,
    fits: tuple[ModelFit, ...],
    weights: np.ndarray,
    estimand: Estimand,
    trimmed: int = 0,
) -> EstimateWithExpansion:
    return EstimateWithExpansion(
        kind=kind,
        point=float(point),
        expansion=np.asarray(expansion, dtype=float),
        model_fits=fits,
        weight_regime=view.design,
        weights=weights,
        rows=view.rows,
        ids=view.ids,
        treatment=view.treatment,
        estimand=estimand,
        trimmed=trimmed,
    )


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def reg_imputation(
    view: DatasetView,
    mu0: ModelFit,
    mu1: ModelFit,
    weights: np.ndarray | None = None,
    *,
    estimand: Estimand = Estimand.ATE,
) -> EstimateWithExpansion:
    """
    Regression imputation: the weighted mean of mu1(z_j) - mu0(z_j).

    The expansion adds the score projection of both outcome fits.
    """
    w = _resolve_weights(view, weights, None)
    c1, c0 = estimand.contrast
    z1 = view.covariates(mu1.spec.covariate_set)
    z0 = view.covariates(mu0.spec.covariate_set)
    tau = c1 * mu1.predict(z1) + c0 * mu0.predict(z0)
    point = _wmean(w, tau)

    expansion = tau - point
    if c1:
        expansion = expansion + mu1.correction(
            c1 * _wmean(w, mu1.derivative(z1))
        )
    if c0:
        expansion = expansion + mu0.correction(
            c0 * _wmean(w, mu0.derivative(z0))
        )
    kind = _kind(view, Method.REG_IMPUTATION, mu1.spec.covariate_set)
    return _package(view, kind, point, expansion, (mu0, mu1), w, estimand)


def ipw(
    view: DatasetView,
    e_fit: ModelFit,
    weights: np.ndarray | None = None,
    estimator_form: EstimatorForm | None = None,
    *,
    estimand: Estimand = Estimand.ATE,
    stabilized: bool = False,
) -> EstimateWithExpansion:
    """
    Inverse probability weighting.

    Args:
        view: Units to average over
        e_fit: Fitted propensity model
        weights: Survey weights (defaults to the view's)
        estimator_form: HORVITZ_THOMPSON (unit weights only) or HAJEK;
            both coincide under unit weights
        estimand: ATE or one arm mean
        stabilized: Normalize the inverse propensities within each arm

    Returns:
        The estimate; the expansion includes the propensity-score term
    """
    w = _resolve_weights(view, weights, estimator_form)
    c1, c0 = estimand.contrast
    a = view.treatment.astype(float)
    y = view.outcome
    e, trimmed = _propensity(view, e_fit)
    e_dot = e_fit.derivative(view.covariates(e_fit.spec.covariate_set))

    if stabilized:
        d1 = _wmean(w, a / e)
        d0 = _wmean(w, (1.0 - a) / (1.0 - e))
        m1 = _wmean(w, a * y / e) / d1
        m0 = _wmean(w, (1.0 - a) * y / (1.0 - e)) / d0
        point = c1 * m1 + c0 * m0
        expansion = (
            c1 * (a / e) * (y - m1) / d1
            + c0 * ((1.0 - a) / (1.0 - e)) * (y - m0) / d0
        )
        slope = (
            -c1 * a / e**2 * (y - m1) / d1
            + c0 * (1.0 - a) / (1.0 - e) ** 2 * (y - m0) / d0
        )
    else:
        t1, t0 = ipw_terms(a, y, e)
        tau = c1 * t1 + c0 * t0
        point = _wmean(w, tau)
        expansion = tau - point
        slope = -c1 * a * y / e**2 + c0 * (1.0 - a) * y / (1.0 - e) ** 2

    expansion = expansion + e_fit.correction(_wmean(w, e_dot * slope[:, None]))
    kind = _kind(view, Method.IPW, e_fit.spec.covariate_set)
    return _package(
        view, kind, point, expansion, (e_fit,), w, estimand, trimmed
    )


def aipw(
    view: DatasetView,
    e_fit: ModelFit,
    mu0: ModelFit,
    mu1: ModelFit,
    weights: np.ndarray | None = None,
    estimator_form: EstimatorForm | None = None,
    *,
    estimand: Estimand = Estimand.ATE,
    include_model_correction: bool = True,
) -> EstimateWithExpansion:
    """
    Augmented inverse probability weighting.

    The expansion carries the propensity-score term and both outcome-score
    projections. Those terms vanish asymptotically only when both working
    models are right; ``include_model_correction=False`` drops them and
    exists to show the resulting under-coverage.
    """
    w = _resolve_weights(view, weights, estimator_form)
    c1, c0 = estimand.contrast
    a = view.treatment.astype(float)
    y = view.outcome
    e, trimmed = _propensity(view, e_fit)
    z1 = view.covariates(mu1.spec.covariate_set)
    z0 = view.covariates(mu0.spec.covariate_set)
    fitted1 = mu1.predict(z1)
    fitted0 = mu0.predict(z0)

    m1, m0 = aipw_terms(a, y, e, fitted1, fitted0)
    tau = c1 * m1 + c0 * m0
    point = _wmean(w, tau)
    expansion = tau - point

    if include_model_correction:
        e_dot = e_fit.derivative(view.covariates(e_fit.spec.covariate_set))
        slope = (
            -c1 * a * (y - fitted1) / e**2
            + c0 * (1.0 - a) * (y - fitted0) / (1.0 - e) ** 2
        )
        expansion = expansion + e_fit.correction(
            _wmean(w, e_dot * slope[:, None])
        )
        if c1:
            gain = c1 * (1.0 - a / e)
            expansion = expansion + mu1.correction(
                _wmean(w, mu1.derivative(z1) * gain[:, None])
            )
        if c0:
            gain = c0 * (1.0 - (1.0 - a) / (1.0 - e))
            expansion = expansion + mu0.correction(
                _wmean(w, mu0.derivative(z0) * gain[:, None])
            )

    kind = _kind(view, Method.AIPW, mu1.spec.covariate_set)
    return _package(
        view, kind, point, expansion, (e_fit, mu0, mu1), w, estimand, trimmed
    )


def matching_bias_corrected(
    view: DatasetView,
    M: int = 1,
    weights: np.ndarray | None = None,
    *,
    matching_vars: CovariateSet = CovariateSet.XU,
    distance_scaling: DistanceScaling = DistanceScaling.RAW,
    include_intercept: bool = True,
    estimand: Estimand = Estimand.ATE,
) -> EstimateWithExpansion:
    """
    Bias-corrected M-nearest-neighbour matching.

    The bias model is a linear regression per arm on the matching
    variables. The expansion is
    mu1(z_j) - mu0(z_j) + (2A_j - 1)(1 + K_j/M)(Y_j - mu_{A_j}(z_j)) - point,
    with fitted regressions and the realized (weighted) match counts.
    """
    w = _resolve_weights(view, weights, None)
    contrast = estimand.contrast
    c1, c0 = contrast
    matches = find_matches(view, matching_vars, M, distance_scaling, w)
    fits = tuple(
        fit_outcome(
            view,
            ModelSpec(
                ModelKind.OUTCOME_LINEAR,
                matching_vars,
                arm=arm,
                include_intercept=include_intercept,
            ),
            w,
        )
        for arm in (0, 1)
    )
    mu0, mu1 = fits
    raw = matching_estimate_raw(view, matches, w, contrast)
    point = raw - bias_correction(view, matches, mu0, mu1, w, contrast)

    z = view.covariates(matching_vars)
    a = view.treatment.astype(float)
    y = view.outcome
    fitted1 = mu1.predict(z)
    fitted0 = mu0.predict(z)
    inflation = 1.0 + matches.counts / M
    m1 = fitted1 + a * inflation * (y - fitted1)
    m0 = fitted0 + (1.0 - a) * inflation * (y - fitted0)
    expansion = c1 * m1 + c0 * m0 - point

    kind = _kind(view, Method.MATCHING, matching_vars)
    return _package(view, kind, point, expansion, fits, w, estimand)


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def estimate(
    view: DatasetView,
    method: Method,
    covariate_set: CovariateSet,
    options: EstimatorOptions | None = None,
) -> EstimateWithExpansion:
    """
    Fit the working models a method needs and run it on one view.

    Working models are fitted with the view's survey weights.
    """
    options = options or EstimatorOptions()
    if covariate_set is CovariateSet.XU:
        prop_cov = options.propensity_covariates or CovariateSet.XU
        out_cov = options.outcome_covariates or CovariateSet.XU
    else:
        prop_cov = out_cov = covariate_set
    form = (
        EstimatorForm.HORVITZ_THOMPSON
        if view.unit_weighted
        else EstimatorForm.HAJEK
    )

    if method is Method.MATCHING:
        return matching_bias_corrected(
            view,
            options.M,
            matching_vars=covariate_set,
            distance_scaling=options.distance_scaling,
            include_intercept=options.include_intercept,
            estimand=options.estimand,
        )

    def outcome_fit(arm: int) -> ModelFit:
        spec = ModelSpec(
            options.outcome_kind,
            out_cov,
            arm=arm,
            include_intercept=options.include_intercept,
        )
        return fit_outcome(view, spec)

    if method is Method.REG_IMPUTATION:
        return reg_imputation(
            view, outcome_fit(0), outcome_fit(1), estimand=options.estimand
        )

    e_fit = fit_logistic_propensity(
        view,
        ModelSpec(
            ModelKind.PROPENSITY_LOGISTIC,
            prop_cov,
            include_intercept=options.include_intercept,
        ),
    )
    if method is Method.IPW:
        return ipw(
            view,
            e_fit,
            estimator_form=form,
            estimand=options.estimand,
            stabilized=options.stabilized,
        )
    return aipw(
        view,
        e_fit,
        outcome_fit(0),
        outcome_fit(1),
        estimator_form=form,
        estimand=options.estimand,
        include_model_correction=options.include_model_correction,
    )


def initial_estimate(
    d: FusedDataset, method: Method, options: EstimatorOptions | None = None
) -> EstimateWithExpansion:
    """The (X, U) estimator on the validation data."""
    return estimate(validation_view(d), method, CovariateSet.XU, options)


def error_prone_pair(
    d: FusedDataset, method: Method, options: EstimatorOptions | None = None
) -> tuple[EstimateWithExpansion, EstimateWithExpansion]:
    """
    The same X-only procedure on the main and on the validation data.

    Models are refitted on each dataset. Under a known-inclusion design the
    main-data estimator is unweighted and the validation-data estimator is
    weighted by 1/pi.

    Returns:
        (estimate on S1, estimate on S2)
    """
    main = estimate(main_view(d), method, CovariateSet.X_ONLY, options)
    validation = estimate(
        validation_view(d), method, CovariateSet.X_ONLY, options
    )
    return main, validation
