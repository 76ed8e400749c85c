"""
Nearest-neighbour matching with replacement.

Each unit is matched to the M closest units of the opposite arm in
Euclidean distance. Search is brute force over all pairs, and distance ties
go to the lower row index, so match sets are fully determined by the data
and its row order.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from scipy.spatial.distance import cdist

from .data import CovariateSet, DatasetView
from .errors import DataError
from .estimating import ModelFit


class DistanceScaling(StrEnum):
    RAW = "raw"
    STANDARDIZED = "standardized"


@dataclass(frozen=True, eq=False)
class MatchResult:
    """
    Match sets and match counts for one view.

    Attributes:
        match_sets: (n, M) row positions within the view; row j lists the
            M nearest opposite-arm units of unit j, nearest first
        counts: K_j, the (possibly weighted) number of times unit j is
            used as a match
        matching_vars: Covariates the distances were computed on
        M: Matches per unit
        weighted: Counts carry inverse inclusion probability weights
    """

    match_sets: np.ndarray
    counts: np.ndarray
    matching_vars: CovariateSet
    M: int
    weighted: bool = False


def find_matches(
    view: DatasetView,
    matching_vars: CovariateSet = CovariateSet.XU,
    M: int = 1,
    distance_scaling: DistanceScaling = DistanceScaling.RAW,
    weights: np.ndarray | None = None,
) -> MatchResult:
    """
    Find the M nearest opposite-arm neighbours of every unit.

    Args:
        view: Units to match
        matching_vars: Covariates defining the distance
        M: Number of matches per unit (>= 1)
        distance_scaling: Raw Euclidean, or each coordinate divided by its
            standard deviation
        weights: Survey weights w_j = 1/pi_j for the weighted counts
            K_j = pi_j * sum_l pi_l^{-1} 1{j in J_l}; the view's own
            weights when omitted

    Returns:
        The match sets and counts

    Raises:
        DataError: An arm has fewer than M units, or a matching variable
            has zero variance under standardized scaling
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    w = view.weights if weights is None else np.asarray(weights, float)
    z = np.asarray(view.covariates(matching_vars), dtype=float)
    if z.shape[1] == 0:
        raise DataError("matching needs at least one covariate")
    if distance_scaling is DistanceScaling.STANDARDIZED:
        scale = z.std(axis=0, ddof=1) if view.n > 1 else np.zeros(z.shape[1])
        if (scale == 0).any():
            names = view.covariate_names(matching_vars)
            flat = [names[i] for i in np.flatnonzero(scale == 0)]
            raise DataError(
                f"zero-variance matching variable: {', '.join(flat)}"
            )
        z = z / scale

    treated = np.flatnonzero(view.treatment == 1)
    control = np.flatnonzero(view.treatment == 0)
    for arm, members in ((1, treated), (0, control)):
        if members.shape[0] < M:
            raise DataError(
                f"arm {arm} has {members.shape[0]} units, fewer than M={M}"
            )

    match_sets = np.empty((view.n, M), dtype=np.intp)
    for source, pool in ((treated, control), (control, treated)):
        distance = cdist(z[source], z[pool])
        # Stable sort keeps the lower row index first on exact ties
        order = np.argsort(distance, axis=1, kind="stable")[:, :M]
        match_sets[source] = pool[order]

    usage = np.bincount(
        match_sets.ravel(), weights=np.repeat(w, M), minlength=view.n
    )
    weighted = not bool((w == 1.0).all())
    return MatchResult(
        match_sets=match_sets,
        counts=usage / w,
        matching_vars=matching_vars,
        M=M,
        weighted=weighted,
    )


def _wmean(w: np.ndarray, values: np.ndarray) -> float:
    return float(w @ values / w.sum())


def imputed_outcomes(
    view: DatasetView, matches: MatchResult
) -> tuple[np.ndarray, np.ndarray]:
    """
    Potential outcomes imputed by matching, without bias correction.

    The observed outcome is kept for the unit's own arm; the other arm is
    the mean outcome of its matches.
    """
    a = view.treatment
    y = view.outcome
    matched_mean = y[matches.match_sets].mean(axis=1)
    y1 = np.where(a == 1, y, matched_mean)
    y0 = np.where(a == 0, y, matched_mean)
    return y1, y0


def matching_estimate_raw(
    view: DatasetView,
    matches: MatchResult,
    weights: np.ndarray | None = None,
    contrast: tuple[float, float] = (1.0, -1.0),
) -> float:
    """
    Matching estimator before bias correction.

    With unit weights this is n^{-1} sum_j (2A_j - 1)(Y_j - M^{-1}
    sum_{l in J_j} Y_l); with inverse-probability weights it is the
    weight-normalized (Hajek) version. ``contrast`` picks the arm
    combination (ATE by default).
    """
    w = view.weights if weights is None else np.asarray(weights, float)
    y1, y0 = imputed_outcomes(view, matches)
    c1, c0 = contrast
    return _wmean(w, c1 * y1 + c0 * y0)


def matching_discrepancies(
    view: DatasetView, matches: MatchResult, mu0: ModelFit, mu1: ModelFit
) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-unit regression adjustments for imperfect matches.

    Returns (b1, b0): b1_j = (1 - A_j) M^{-1} sum_l {mu1(z_j) - mu1(z_l)}
    adjusts the imputed Y(1) of controls, b0_j likewise for treated units.
    """
    z = view.covariates(matches.matching_vars)
    a = view.treatment
    sets = matches.match_sets
    fitted1 = mu1.predict(z)
    fitted0 = mu0.predict(z)
    b1 = np.where(a == 0, fitted1 - fitted1[sets].mean(axis=1), 0.0)
    b0 = np.where(a == 1, fitted0 - fitted0[sets].mean(axis=1), 0.0)
    return b1, b0


def bias_correction(
    view: DatasetView,
    matches: MatchResult,
    mu0: ModelFit,
    mu1: ModelFit,
    weights: np.ndarray | None = None,
    contrast: tuple[float, float] = (1.0, -1.0),
) -> float:
    """
    Estimated matching bias, to be subtracted from the raw estimate.

    For the ATE this is the (weighted) mean of (2A_j - 1) M^{-1}
    sum_l {mu_{1-A_j}(z_j) - mu_{1-A_j}(z_l)}; it is exactly zero when the
    fitted regressions are constant or matches are exact.
    """
    w = view.weights if weights is None else np.asarray(weights, float)
    b1, b0 = matching_discrepancies(view, matches, mu0, mu1)
    c1, c0 = contrast
    return -_wmean(w, c1 * b1 + c0 * b0)
