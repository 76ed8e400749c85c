"""
Fusion of an initial estimator with error-prone estimator differences.

The fused estimator is

    tau_hat = tau2 - Gamma^T V^{-1} (tau2_ep - tau1_ep),

where Gamma is the covariance between the initial estimator and the
error-prone differences and V the covariance of the differences. Both are
estimated either analytically from the per-unit expansions or by
resampling those frozen expansions.

Scales: in a simple random design Gamma, V and v2 are reported on the
sqrt(n2) scale (variances of n2^{1/2}(.)) and v_hat divides by n2; under a
known-inclusion design they are variances of the estimators themselves
and v_hat = v2 - Gamma^T V^{-1} Gamma.
"""

from __future__ import annotations

import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from functools import partial
from typing import NamedTuple

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .data import Design
from .errors import DataError, EstimationWarning, NumericalError
from .estimators import (
    DatasetRole,
    EstimateWithExpansion,
    Estimand,
    Method,
)
from .replicates import par_replicates

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
DEFAULT_REPLICATES = 2000
DEFAULT_LEVEL = 0.95
MAX_ATTEMPTS = 1000
REPLICATE_BLOCK = 64


class VarianceSource(StrEnum):
    ANALYTIC = "analytic"
    BOOTSTRAP = "bootstrap"


class ResampleScheme(StrEnum):
    JOINT = "joint"
    STRATIFIED = "stratified"
    WEIGHTED = "weighted"


@dataclass(frozen=True)
class BootstrapSpec:
    """
    Resampling of frozen expansions.

    Attributes:
        B: Number of replicates (>= 2)
        seed: Root seed; replicate b draws from the stream keyed (seed, b)
        scheme: JOINT draws n1 units from S1; STRATIFIED draws n2 from S2
            and n1 - n2 from the rest; WEIGHTED is the joint draw for a
            known-inclusion design
    """

    B: int = DEFAULT_REPLICATES
    seed: int = 0
    scheme: ResampleScheme = ResampleScheme.JOINT

    def __post_init__(self) -> None:
        if self.B < 2:
            raise ValueError("bootstrap needs at least 2 replicates")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a non-negative 64-bit integer")


type Variance = VarianceSource | BootstrapSpec


@dataclass(frozen=True)
class SourcePair:
    """
    One error-prone estimator computed on a main source and on the
    validation data. Pairs with the same ``source`` share a main dataset.
    """

    source: str
    main: EstimateWithExpansion
    validation: EstimateWithExpansion


@dataclass(frozen=True, eq=False)
class FusionInputs:
    """
    Initial estimator plus L error-prone (main, validation) pairs.

    Attributes:
        tau2: The (X, U) estimator on the validation data
        ep_pairs: Ordered (estimate on S1, estimate on S2) pairs
        regime: Sampling design (defaults to tau2's)
        main_fixed: Treat the main-data estimates as fixed constants and
            take all uncertainty from the validation data
    """

    tau2: EstimateWithExpansion
    ep_pairs: tuple[tuple[EstimateWithExpansion, EstimateWithExpansion], ...]
    regime: Design | None = None
    main_fixed: bool = False

    def __post_init__(self) -> None:
        pairs = tuple(tuple(p) for p in self.ep_pairs)
        object.__setattr__(self, "ep_pairs", pairs)
        if self.regime is None:
            object.__setattr__(self, "regime", self.tau2.weight_regime)
        if not pairs:
            raise ValueError("at least one error-prone pair is required")
        if self.tau2.kind.dataset is not DatasetRole.VALIDATION:
            raise ValueError("the initial estimator must use validation data")
        for main, validation in pairs:
            _check_pair(main, validation)

    @property
    def L(self) -> int:
        return len(self.ep_pairs)

    def source_pairs(self) -> tuple[SourcePair, ...]:
        return tuple(SourcePair("main", m, v) for m, v in self.ep_pairs)


class Moments(NamedTuple):
    """Estimated (Gamma, V, v2) with their scale."""

    gamma: np.ndarray
    V: np.ndarray
    v2: float
    scale: float
    redraws: int = 0


@dataclass(frozen=True, eq=False)
class FusionResult:
    """
    Fused estimate and its diagnostics.

    ``coefficients`` holds Gamma^T V^{-1} with zeros for dropped
    components; ``kept`` lists the components used.
    """

    tau_hat: float
    tau2: float
    ep_diff: np.ndarray
    Gamma: np.ndarray
    V: np.ndarray
    v2: float
    v_hat: float
    ci: tuple[float, float, float]
    variance_reduction: float
    coefficients: np.ndarray
    kept: tuple[int, ...]
    condition_number: float
    fallback: bool
    scale: float
    variance_source: str = VarianceSource.ANALYTIC.value
    regime: str = Design.SIMPLE_RANDOM.value
    n1: int = 0
    n2: int = 0
    ep_main_points: tuple[float, ...] = ()
    ep_validation_points: tuple[float, ...] = ()
    redraws: int = 0
    labels: tuple[str, ...] = field(default=())

    @property
    def se(self) -> float:
        return float(np.sqrt(self.v_hat))

    @property
    def tau2_variance(self) -> float:
        """Variance estimate of tau2 alone."""
        return self.v2 / self.scale

    def to_dict(self) -> dict:
        lo, hi, level = self.ci
        return {
            "tau_hat": self.tau_hat,
            "tau2": self.tau2,
            "tau2_variance": self.tau2_variance,
            "tau1_ep": list(self.ep_main_points),
            "tau2_ep": list(self.ep_validation_points),
            "ep_diff": self.ep_diff.tolist(),
            "Gamma": self.Gamma.tolist(),
            "V": self.V.tolist(),
            "v2": self.v2,
            "v_hat": self.v_hat,
            "ci": {"lower": lo, "upper": hi, "level": level},
            "variance_reduction_pct": 100.0 * self.variance_reduction,
            "coefficients": self.coefficients.tolist(),
            "diagnostics": {
                "condition_number": self.condition_number,
                "fallback": self.fallback,
                "kept": list(self.kept),
                "scale": self.scale,
                "variance_source": self.variance_source,
                "regime": self.regime,
                "n1": self.n1,
                "n2": self.n2,
                "bootstrap_redraws": self.redraws,
            },
            "components": list(self.labels),
        }


@dataclass(frozen=True)
class SensitivityPoint:
    delta: tuple[float, ...]
    tau_adj: float
    ci: tuple[float, float, float]


# ---------------------------------------------------------------------------
# Validation of inputs
# ---------------------------------------------------------------------------


def _check_pair(
    main: EstimateWithExpansion, validation: EstimateWithExpansion
) -> None:
    if main.kind.dataset is not DatasetRole.MAIN:
        raise ValueError("first member of an error-prone pair must use S1")
    if validation.kind.dataset is not DatasetRole.VALIDATION:
        raise ValueError("second member of an error-prone pair must use S2")
    if (
        main.kind.method != validation.kind.method
        or main.kind.covariate_set != validation.kind.covariate_set
        or main.estimand != validation.estimand
    ):
        raise ValueError(
            "error-prone pair members must share method and specification"
        )


def _check_alignment(
    tau: EstimateWithExpansion, pairs: Sequence[SourcePair]
) -> None:
    for pair in pairs:
        _check_pair(pair.main, pair.validation)
        if not np.array_equal(pair.validation.ids, tau.ids):
            raise DataError(
                "error-prone validation estimates must cover the same units, "
                "in the same order, as the initial estimator"
            )


# ---------------------------------------------------------------------------
# Source layout shared by the analytic and resampling paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Source:
    n: int
    positions: np.ndarray  # rows of the validation units within the source
    outside: np.ndarray  # rows of the source not in the validation data


def _layout(
    tau: EstimateWithExpansion, pairs: Sequence[SourcePair]
) -> tuple[list[_Source], list[int]]:
    """Distinct main sources and, per component, its source index."""
    names: list[str] = []
    sources: list[_Source] = []
    owner: list[int] = []
    for pair in pairs:
        if pair.source in names:
            owner.append(names.index(pair.source))
            continue
        lookup = {uid: i for i, uid in enumerate(pair.main.ids)}
        try:
            positions = np.array([lookup[uid] for uid in tau.ids], np.intp)
        except KeyError as err:
            raise DataError(
                f"validation unit {err.args[0]} is missing from source "
                f"{pair.source!r}"
            ) from None
        mask = np.ones(pair.main.n, dtype=bool)
        mask[positions] = False
        names.append(pair.source)
        sources.append(_Source(pair.main.n, positions, np.flatnonzero(mask)))
        owner.append(len(sources) - 1)

    for pair, k in zip(pairs, owner):
        if pair.main.n != sources[k].n:
            raise DataError(
                f"estimates labelled {pair.source!r} disagree on its size"
            )
    return sources, owner


# ---------------------------------------------------------------------------
# Analytic moments
# ---------------------------------------------------------------------------


def _analytic_srs(
    tau: EstimateWithExpansion,
    pairs: Sequence[SourcePair],
    main_fixed: bool,
) -> Moments:
    sources, owner = _layout(tau, pairs)
    psi = tau.expansion
    n_k = tau.n
    phi2 = np.array([p.validation.expansion for p in pairs])
    L = len(pairs)

    v2 = float(np.mean(psi**2))
    if main_fixed:
        gamma = phi2 @ psi / n_k
        V = phi2 @ phi2.T / n_k
        return Moments(gamma, V, v2, float(n_k))

    shrink = np.array([1.0 - n_k / sources[owner[i]].n for i in range(L)])
    gamma = shrink * (phi2 @ psi) / n_k
    V = np.empty((L, L))
    for i in range(L):
        for j in range(i, L):
            if owner[i] == owner[j]:
                phi_i = pairs[i].main.expansion
                phi_j = pairs[j].main.expansion
                value = shrink[i] * float(np.mean(phi_i * phi_j))
            else:
                value = shrink[i] * shrink[j] * float(
                    np.mean(phi2[i] * phi2[j])
                )
            V[i, j] = V[j, i] = value
    return Moments(gamma, V, v2, float(n_k))


def _analytic_known(
    tau: EstimateWithExpansion,
    pairs: Sequence[SourcePair],
    main_fixed: bool,
) -> Moments:
    sources, _ = _layout(tau, pairs)
    if len(sources) > 1:
        raise ValueError(
            "multiple main sources are supported for simple random designs "
            "only"
        )
    source = sources[0]
    n1 = source.n
    omega = tau.weights
    psi = tau.expansion
    phi2 = np.array([p.validation.expansion for p in pairs])

    v2 = float(np.sum((omega * psi) ** 2)) / n1**2
    if main_fixed:
        scaled = phi2 * omega
        gamma = scaled @ (omega * psi) / n1**2
        V = scaled @ scaled.T / n1**2
        return Moments(gamma, V, v2, 1.0)

    phi1 = np.array([p.main.expansion for p in pairs])
    gamma = (phi2 * (omega - 1.0)) @ (omega * psi) / n1**2
    inside = phi1[:, source.positions] * (omega - 1.0)
    outside = phi1[:, source.outside]
    V = (inside @ inside.T + outside @ outside.T) / n1**2
    return Moments(gamma, V, v2, 1.0)


def _analytic(
    tau: EstimateWithExpansion,
    pairs: Sequence[SourcePair],
    regime: Design,
    main_fixed: bool,
) -> Moments:
    estimates = [tau] + [e for p in pairs for e in (p.main, p.validation)]
    if any(e.kind.method is Method.MATCHING for e in estimates):
        raise ValueError(
            "matching estimators have no analytic variance here; use "
            "the bootstrap variance source"
        )
    _check_alignment(tau, pairs)
    if regime is Design.KNOWN_INCLUSION:
        return _analytic_known(tau, pairs, main_fixed)
    return _analytic_srs(tau, pairs, main_fixed)


def analytic_gamma_v(inputs: FusionInputs) -> Moments:
    """
    Analytic estimates of (Gamma, V, v2) from the expansions.

    Simple random design:
        Gamma = (1 - n2/n1) n2^{-1} sum_{S2} psi_j phi2_j,
        V = (1 - n2/n1) n1^{-1} sum_{S1} phi1_i phi1_i^T,
        v2 = n2^{-1} sum_{S2} psi_j^2.

    Known inclusion probabilities (omega = 1/pi, estimator scale):
        v2 = n1^{-2} sum_{S2} omega^2 psi^2,
        Gamma = n1^{-2} sum_{S2} omega (omega - 1) psi phi2,
        V = n1^{-2} [sum_{S2} (omega - 1)^2 phi1 phi1^T
                     + sum_{S1 minus S2} phi1 phi1^T].

    Raises:
        ValueError: A matching estimator is involved
    """
    return _analytic(
        inputs.tau2, inputs.source_pairs(), inputs.regime, inputs.main_fixed
    )


# ---------------------------------------------------------------------------
# Bootstrap moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _ResamplePlan:
    seed: int
    scheme: ResampleScheme
    main_fixed: bool
    psi: np.ndarray
    phi2: np.ndarray
    phi1: tuple[np.ndarray, ...]
    owner: tuple[int, ...]
    sources: tuple[_Source, ...]
    treatment: np.ndarray
    omega: np.ndarray | None  # validation weights in the weighted scheme


def _draw_counts(
    plan: _ResamplePlan, rng: np.random.Generator
) -> tuple[np.ndarray, list[np.ndarray]]:
    n_k = plan.psi.shape[0]
    if plan.main_fixed:
        counts_k = np.bincount(rng.integers(0, n_k, n_k), minlength=n_k)
        return counts_k, []

    if plan.scheme is ResampleScheme.STRATIFIED:
        counts_k = np.bincount(rng.integers(0, n_k, n_k), minlength=n_k)
        per_source = []
        for source in plan.sources:
            counts = np.zeros(source.n, dtype=np.int64)
            counts[source.positions] = counts_k
            m = source.outside.shape[0]
            if m:
                counts[source.outside] = np.bincount(
                    rng.integers(0, m, m), minlength=m
                )
            per_source.append(counts)
        return counts_k, per_source

    source = plan.sources[0]
    n1 = source.n
    counts = np.bincount(rng.integers(0, n1, n1), minlength=n1)
    return counts[source.positions], [counts]


def _bootstrap_replicate(plan: _ResamplePlan, b: int) -> tuple[np.ndarray, int]:
    """Deviation vector (d tau2, d diff_1..L) of replicate b."""
    rng = np.random.default_rng([plan.seed, b])
    redraws = 0
    for _ in range(MAX_ATTEMPTS):
        counts_k, per_source = _draw_counts(plan, rng)
        drawn = plan.treatment[counts_k > 0]
        if (drawn == 1).any() and (drawn == 0).any():
            break
        redraws += 1
    else:
        raise NumericalError(
            "bootstrap could not draw both treatment arms into the "
            "validation sample; use stratified resampling"
        )

    if plan.omega is None:
        n_k = plan.psi.shape[0]
        d_tau = counts_k @ plan.psi / n_k
        d_val = plan.phi2 @ counts_k / n_k
    else:
        n1 = plan.sources[0].n
        weighted = counts_k * plan.omega
        d_tau = weighted @ plan.psi / n1
        d_val = plan.phi2 @ weighted / n1

    if plan.main_fixed:
        d_main = np.zeros_like(d_val)
    else:
        d_main = np.array(
            [
                per_source[k] @ phi / plan.sources[k].n
                for phi, k in zip(plan.phi1, plan.owner)
            ]
        )
    return np.concatenate([[d_tau], d_val - d_main]), redraws


def check_redraws(per_replicate: Sequence[int], B: int) -> int:
    """
    Total number of redraws, refusing when most replicates needed one.

    A replicate counts once toward the limit however many redraws it
    took; the total is kept as a diagnostic.

    Raises:
        NumericalError: More than half of the B replicates were redrawn
    """
    redrawn = sum(1 for r in per_replicate if r > 0)
    total = int(sum(per_replicate))
    if total:
        logger.debug(
            "bootstrap redrew %d of %d replicates (%d draws)",
            redrawn,
            B,
            total,
        )
    if redrawn > B / 2:
        raise NumericalError(
            f"{redrawn} of {B} bootstrap replicates had an empty "
            "validation arm; use stratified resampling"
        )
    return total


def _bootstrap(
    tau: EstimateWithExpansion,
    pairs: Sequence[SourcePair],
    regime: Design,
    main_fixed: bool,
    spec: BootstrapSpec,
) -> Moments:
    _check_alignment(tau, pairs)
    sources, owner = _layout(tau, pairs)
    known = regime is Design.KNOWN_INCLUSION
    if not main_fixed:
        if known and spec.scheme is not ResampleScheme.WEIGHTED:
            raise ValueError(
                "known inclusion probabilities need the weighted scheme"
            )
        if not known and spec.scheme is ResampleScheme.WEIGHTED:
            raise ValueError("the weighted scheme needs a known-pi design")
        if len(sources) > 1 and spec.scheme is not ResampleScheme.STRATIFIED:
            raise ValueError(
                "several main sources can only be resampled stratified"
            )

    plan = _ResamplePlan(
        seed=spec.seed,
        scheme=spec.scheme,
        main_fixed=main_fixed,
        psi=tau.expansion,
        phi2=np.array([p.validation.expansion for p in pairs]),
        phi1=tuple(p.main.expansion for p in pairs),
        owner=tuple(owner),
        sources=tuple(sources),
        treatment=tau.treatment,
        omega=tau.weights if known else None,
    )
    results = (
        par_replicates(spec.B)
        .with_min_len(REPLICATE_BLOCK)
        .map(partial(_bootstrap_replicate, plan))
        .collect()
    )
    deviations = np.array([r[0] for r in results])
    redraws = check_redraws([r[1] for r in results], spec.B)

    cov = np.atleast_2d(np.cov(deviations, rowvar=False, ddof=1))
    scale = 1.0 if known else float(tau.n)
    factor = 1.0 if known else scale
    return Moments(
        gamma=cov[0, 1:] * factor,
        V=cov[1:, 1:] * factor,
        v2=float(cov[0, 0] * factor),
        scale=scale,
        redraws=int(redraws),
    )


def bootstrap_gamma_v(inputs: FusionInputs, spec: BootstrapSpec) -> Moments:
    """
    Bootstrap estimates of (Gamma, V, v2) from the frozen expansions.

    Each replicate redraws units and recomputes the estimator deviations
    as resampled sums of the fixed expansion values; nothing is refitted.
    Covariances use divisor B - 1. A replicate whose validation draw lacks
    an arm is redrawn from its own stream.

    Raises:
        NumericalError: More than half of the replicates needed a redraw
    """
    return _bootstrap(
        inputs.tau2,
        inputs.source_pairs(),
        inputs.regime,
        inputs.main_fixed,
        spec,
    )


# ---------------------------------------------------------------------------
# Combination
# ---------------------------------------------------------------------------


def _condition(V: np.ndarray) -> float:
    magnitudes = np.abs(np.linalg.eigvalsh(V))
    smallest = magnitudes.min()
    return float(magnitudes.max() / smallest) if smallest > 0 else np.inf


def _select_components(V: np.ndarray) -> tuple[list[int], float]:
    kept = list(range(V.shape[0]))
    condition = _condition(V)
    while kept:
        sub = V[np.ix_(kept, kept)]
        eigenvalues, eigenvectors = np.linalg.eigh(sub)
        smallest = eigenvalues[0]
        if smallest > 0 and eigenvalues[-1] / smallest <= CONDITION_LIMIT:
            break
        loadings = np.abs(eigenvectors[:, 0])
        # ties, up to rounding, go to the later component
        drop = int(np.flatnonzero(loadings >= loadings.max() - 1e-9)[-1])
        logger.debug("dropping error-prone component %d", kept[drop])
        del kept[drop]
    return kept, condition


def combine(
    tau2: float,
    ep_diff,
    gamma,
    V,
    v2: float,
    scale: float,
    ci_level: float = DEFAULT_LEVEL,
    **details,
) -> FusionResult:
    """
    The fusion algebra on given moments.

    Args:
        tau2: Initial estimate
        ep_diff: tau2_ep - tau1_ep, one entry per component
        gamma: Gamma-hat
        V: V-hat
        v2: v2-hat
        scale: n2 in a simple random design, 1 under known inclusion
        ci_level: Confidence level of the Wald interval
        **details: Extra FusionResult fields (diagnostics)

    Returns:
        The fused result. Components making V numerically singular are
        dropped greedily along the smallest-eigenvalue direction; if all
        are dropped the result is tau2 with its own variance.
    """
    if not 0.0 < ci_level < 1.0:
        raise ValueError("ci_level must lie strictly between 0 and 1")
    ep_diff = np.atleast_1d(np.asarray(ep_diff, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    V = 0.5 * (V + V.T)
    L = ep_diff.shape[0]
    if gamma.shape != (L,) or V.shape != (L, L):
        raise ValueError("Gamma, V and ep_diff dimensions disagree")

    kept, condition = _select_components(V)
    fallback = len(kept) < L
    coefficients = np.zeros(L)
    if kept:
        factor = linalg.cho_factor(V[np.ix_(kept, kept)])
        coefficients[kept] = linalg.cho_solve(factor, gamma[kept])
    if fallback:
        warnings.warn(
            f"V is numerically singular; kept components {kept} of {L}",
            EstimationWarning,
            stacklevel=2,
        )

    information = float(gamma @ coefficients)
    tau_hat = float(tau2 - coefficients @ ep_diff)
    v_hat = (v2 - information) / scale
    if v_hat < 0:
        warnings.warn(
            "fused variance estimate is negative; truncated at zero",
            EstimationWarning,
            stacklevel=2,
        )
        v_hat = 0.0
    z = float(norm.ppf(0.5 + ci_level / 2.0))
    half = z * np.sqrt(v_hat)
    return FusionResult(
        tau_hat=tau_hat,
        tau2=float(tau2),
        ep_diff=ep_diff,
        Gamma=gamma,
        V=V,
        v2=float(v2),
        v_hat=float(v_hat),
        ci=(tau_hat - half, tau_hat + half, ci_level),
        variance_reduction=information / v2 if v2 > 0 else 0.0,
        coefficients=coefficients,
        kept=tuple(kept),
        condition_number=condition,
        fallback=fallback,
        scale=float(scale),
        **details,
    )


def _moments(
    tau: EstimateWithExpansion,
    pairs: Sequence[SourcePair],
    regime: Design,
    main_fixed: bool,
    variance: Variance,
) -> Moments:
    if isinstance(variance, BootstrapSpec):
        return _bootstrap(tau, pairs, regime, main_fixed, variance)
    if variance is VarianceSource.BOOTSTRAP:
        raise ValueError("pass a BootstrapSpec to use the bootstrap")
    return _analytic(tau, pairs, regime, main_fixed)


def _fuse_pairs(
    tau: EstimateWithExpansion,
    pairs: Sequence[SourcePair],
    regime: Design,
    main_fixed: bool,
    variance: Variance,
    ci_level: float,
) -> FusionResult:
    moments = _moments(tau, pairs, regime, main_fixed, variance)
    ep_diff = np.array([p.validation.point - p.main.point for p in pairs])
    source = (
        VarianceSource.BOOTSTRAP
        if isinstance(variance, BootstrapSpec)
        else VarianceSource.ANALYTIC
    )
    return combine(
        tau.point,
        ep_diff,
        moments.gamma,
        moments.V,
        moments.v2,
        moments.scale,
        ci_level,
        variance_source=source.value,
        regime=regime.value,
        n1=max(p.main.n for p in pairs),
        n2=tau.n,
        ep_main_points=tuple(p.main.point for p in pairs),
        ep_validation_points=tuple(p.validation.point for p in pairs),
        redraws=moments.redraws,
        labels=tuple(f"{p.source}:{p.main.kind.method}" for p in pairs),
    )


def fuse(
    inputs: FusionInputs,
    variance: Variance = VarianceSource.ANALYTIC,
    ci_level: float = DEFAULT_LEVEL,
) -> FusionResult:
    """
    Fuse the initial estimator with its error-prone differences.

    Args:
        inputs: Initial estimator and error-prone pairs
        variance: VarianceSource.ANALYTIC or a BootstrapSpec
        ci_level: Wald interval level

    Returns:
        The fused estimate, variance, interval and diagnostics
    """
    return _fuse_pairs(
        inputs.tau2,
        inputs.source_pairs(),
        inputs.regime,
        inputs.main_fixed,
        variance,
        ci_level,
    )


def fuse_multi(
    tau_k: EstimateWithExpansion,
    pairs: Sequence[SourcePair],
    variance: Variance = VarianceSource.ANALYTIC,
    ci_level: float = DEFAULT_LEVEL,
) -> FusionResult:
    """
    Fuse with error-prone differences from several main sources.

    Every source contains the validation units (matched by id) and sources
    are otherwise disjoint. Differences are stacked into one vector; pairs
    with the same source label share that source's main data.
    """
    if not pairs:
        raise ValueError("at least one error-prone pair is required")
    return _fuse_pairs(
        tau_k, list(pairs), tau_k.weight_regime, False, variance, ci_level
    )


# ---------------------------------------------------------------------------
# Nonlinear estimands
# ---------------------------------------------------------------------------


def _ratio_gradient(
    estimand: Estimand, m1: float, m0: float
) -> tuple[float, float, float]:
    """Transformed value and its partial derivatives in (m1, m0)."""
    if estimand is Estimand.LOG_CRR:
        if m1 <= 0 or m0 <= 0:
            raise ValueError(
                f"log risk ratio needs positive arm means, got {m1}, {m0}"
            )
        return float(np.log(m1) - np.log(m0)), 1.0 / m1, -1.0 / m0
    if estimand is Estimand.LOG_COR:
        if not (0 < m1 < 1 and 0 < m0 < 1):
            raise ValueError(
                f"log odds ratio needs arm means in (0, 1), got {m1}, {m0}"
            )
        value = np.log(m1 / (1 - m1)) - np.log(m0 / (1 - m0))
        return float(value), 1.0 / (m1 * (1 - m1)), -1.0 / (m0 * (1 - m0))
    raise ValueError(f"{estimand} is not a ratio estimand")


def transform_arm_means(
    treated: EstimateWithExpansion,
    control: EstimateWithExpansion,
    estimand: Estimand,
) -> EstimateWithExpansion:
    """
    Delta-method combination of two arm-mean estimates on the same units.

    The expansion is g1 * psi_1 + g0 * psi_0 with the gradient of the
    transform at the two point estimates.
    """
    if treated.estimand is not Estimand.TREATED_MEAN:
        raise ValueError("first estimate must target the treated mean")
    if control.estimand is not Estimand.CONTROL_MEAN:
        raise ValueError("second estimate must target the control mean")
    if not np.array_equal(treated.ids, control.ids):
        raise ValueError("arm-mean estimates must cover the same units")
    value, g1, g0 = _ratio_gradient(estimand, treated.point, control.point)
    return replace(
        treated,
        point=value,
        expansion=g1 * treated.expansion + g0 * control.expansion,
        model_fits=treated.model_fits + control.model_fits,
        estimand=estimand,
        trimmed=treated.trimmed + control.trimmed,
    )


def fuse_ratio_estimand(
    treated: FusionInputs,
    control: FusionInputs,
    estimand: Estimand,
    variance: Variance = VarianceSource.ANALYTIC,
    ci_level: float = DEFAULT_LEVEL,
) -> FusionResult:
    """
    Fuse a log risk ratio or log odds ratio.

    ``treated`` and ``control`` carry arm-mean versions of the same
    estimators (initial and error-prone). Each estimator is transformed by
    the delta method, then the usual fusion applies.

    Raises:
        ValueError: An arm mean is at or beyond the transform's boundary
    """
    if treated.L != control.L:
        raise ValueError("both arms need the same error-prone estimators")
    pairs = tuple(
        (
            transform_arm_means(m1, m0, estimand),
            transform_arm_means(v1, v0, estimand),
        )
        for (m1, v1), (m0, v0) in zip(treated.ep_pairs, control.ep_pairs)
    )
    inputs = FusionInputs(
        tau2=transform_arm_means(treated.tau2, control.tau2, estimand),
        ep_pairs=pairs,
        regime=treated.regime,
        main_fixed=treated.main_fixed,
    )
    return fuse(inputs, variance, ci_level)


# ---------------------------------------------------------------------------
# Sensitivity analysis
# ---------------------------------------------------------------------------


def _delta_rows(delta_grid, L: int) -> np.ndarray:
    grid = np.asarray(delta_grid, dtype=float)
    if grid.ndim == 1 and L == 1:
        return grid[:, None]
    if grid.ndim == 2 and grid.shape[1] == L:
        return grid
    raise ValueError(
        f"delta grid must have {L} column(s), got shape {grid.shape}"
    )


def sensitivity_from_result(
    result: FusionResult, delta_grid
) -> list[SensitivityPoint]:
    """Adjusted estimates tau2 - coef^T (ep_diff - delta) over a grid."""
    rows = _delta_rows(delta_grid, result.ep_diff.shape[0])
    level = result.ci[2]
    half = float(norm.ppf(0.5 + level / 2.0)) * np.sqrt(result.v_hat)
    points = []
    for delta in rows:
        tau_adj = float(
            result.tau2 - result.coefficients @ (result.ep_diff - delta)
        )
        points.append(
            SensitivityPoint(
                delta=tuple(float(d) for d in delta),
                tau_adj=tau_adj,
                ci=(tau_adj - half, tau_adj + half, level),
            )
        )
    return points


def sensitivity_curve(
    inputs: FusionInputs,
    delta_grid,
    variance: Variance = VarianceSource.ANALYTIC,
    ci_level: float = DEFAULT_LEVEL,
) -> list[SensitivityPoint]:
    """
    Fused estimates allowing a systematic shift delta between the
    error-prone estimators of the two datasets.

    The variance does not depend on delta. A scalar grid is accepted when
    there is one error-prone component.
    """
    _delta_rows(delta_grid, inputs.L)
    return sensitivity_from_result(
        fuse(inputs, variance, ci_level), delta_grid
    )
