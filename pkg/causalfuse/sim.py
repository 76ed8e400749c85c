"""
Monte Carlo study of the fused estimators.

Data generating process, for i = 1..n1:

    X ~ Unif(0, 2)
    U = 0.5 + 0.5 X - 2 sin X + 2 sign(sin 5X) + e,   e ~ Unif(-0.5, 0.5)
    Y(0) = -X - U + e0,   Y(1) = -X + 4U + e1,        e0, e1 ~ N(0, 1)
    logit P(A = 1 | X, U) = 1 - 0.5 X - 0.5 U

The validation subset is a simple random sample of size n2, or, under the
known-inclusion design, a Bernoulli draw with outcome-dependent
probability. The average treatment effect is 5 E(U).

Replicate r draws from the stream keyed (seed, r), so a report depends
only on its configuration, never on the thread count.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from functools import partial
from os import PathLike

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.special import expit
from scipy.stats import norm

from .data import CovariateSet, Design, FusedDataset
from .errors import CausalFuseError, EstimationWarning
from .estimators import (
    EstimateWithExpansion,
    EstimatorOptions,
    Method,
    error_prone_pair,
    initial_estimate,
)
from .fusion import (
    BootstrapSpec,
    FusionInputs,
    ResampleScheme,
    VarianceSource,
    fuse,
)
from .replicates import par_replicates

logger = logging.getLogger(__name__)

FAILURE_TOLERANCE = 0.01


class Misspecification(StrEnum):
    NONE = "none"
    WRONG_OUTCOME = "wrong_outcome"
    WRONG_PROPENSITY = "wrong_propensity"


@dataclass(frozen=True)
class MenuItem:
    """An initial method fused with one or more error-prone methods."""

    initial: Method
    error_prone: tuple[Method, ...]

    def __post_init__(self) -> None:
        if not self.error_prone:
            raise ValueError("at least one error-prone method is required")

    @property
    def label(self) -> str:
        return f"{self.initial}&{'+'.join(self.error_prone)}"

    @property
    def uses_matching(self) -> bool:
        return Method.MATCHING in (self.initial, *self.error_prone)

    @classmethod
    def parse(cls, text: str) -> MenuItem:
        """Parse ``initial&ep1+ep2``, e.g. ``aipw&aipw`` or ``aipw&ipw+reg``."""
        initial, sep, rest = text.partition("&")
        if not sep or not rest:
            raise ValueError(f"menu item {text!r} is not 'initial&ep'")
        return cls(
            Method(initial.strip()),
            tuple(Method(m.strip()) for m in rest.split("+")),
        )


SAME_TYPE_MENU = tuple(
    MenuItem(m, (m,))
    for m in (Method.REG_IMPUTATION, Method.IPW, Method.AIPW, Method.MATCHING)
)


@dataclass(frozen=True)
class SimConfig:
    """
    One Monte Carlo configuration.

    Attributes:
        n1: Main sample size
        n2: Validation sample size (simple random design only)
        reps: Monte Carlo replications
        seed: Root seed
        menu: Estimator combinations to evaluate
        variance_sources: Which variance estimates to compute per fused
            estimator; matching combinations skip the analytic one
        bootstrap_reps: B for the bootstrap variance
        misspecification: Deliberately wrong working model of the XU
            estimator
        design: SIMPLE_RANDOM, or KNOWN_INCLUSION with
            pi = pi_high if Y > y_cut else pi_low
        ci_level: Wald interval level
        M: Matches per unit
        model_correction: Whether AIPW variances include the working-model
            correction; False gives the truncated variance that treats
            fitted nuisance models as known
    """

    n1: int = 1000
    n2: int = 200
    reps: int = 2000
    seed: int = 0
    menu: tuple[MenuItem, ...] = SAME_TYPE_MENU
    variance_sources: tuple[VarianceSource, ...] = (VarianceSource.ANALYTIC,)
    bootstrap_reps: int = 500
    misspecification: Misspecification = Misspecification.NONE
    design: Design = Design.SIMPLE_RANDOM
    pi_high: float = 0.9
    pi_low: float = 0.1
    y_cut: float = 0.0
    ci_level: float = 0.95
    M: int = 1
    model_correction: bool = True

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 2 <= self.n2 < self.n1:
            raise ValueError("need 2 <= n2 < n1")
        if not 0.0 < self.pi_low <= 1.0 or not 0.0 < self.pi_high <= 1.0:
            raise ValueError("inclusion probabilities must lie in (0, 1]")
        if not self.menu:
            raise ValueError("the estimator menu is empty")
        if not self.variance_sources:
            raise ValueError("at least one variance source is required")

    @classmethod
    def from_dict(cls, raw: dict) -> SimConfig:
        """Build a config from its JSON form (see ``to_dict``)."""
        raw = dict(raw)
        if "menu" in raw:
            raw["menu"] = tuple(MenuItem.parse(m) for m in raw["menu"])
        if "variance_sources" in raw:
            raw["variance_sources"] = tuple(
                VarianceSource(v) for v in raw["variance_sources"]
            )
        if "misspecification" in raw:
            raw["misspecification"] = Misspecification(raw["misspecification"])
        if "design" in raw:
            raw["design"] = Design(raw["design"])
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown simulation keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["menu"] = [item.label for item in self.menu]
        raw["variance_sources"] = [str(v) for v in self.variance_sources]
        raw["misspecification"] = str(self.misspecification)
        raw["design"] = str(self.design)
        return raw

    @property
    def options(self) -> EstimatorOptions:
        return EstimatorOptions(
            M=self.M,
            propensity_covariates=CovariateSet.X_ONLY
            if self.misspecification is Misspecification.WRONG_PROPENSITY
            else None,
            outcome_covariates=CovariateSet.X_ONLY
            if self.misspecification is Misspecification.WRONG_OUTCOME
            else None,
            include_model_correction=self.model_correction,
        )


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------


def confounder_mean(x) -> np.ndarray:
    """E(U | X = x); np.sign gives sign(0) = 0."""
    x = np.asarray(x, dtype=float)
    return 0.5 + 0.5 * x - 2.0 * np.sin(x) + 2.0 * np.sign(np.sin(5.0 * x))


def generate(config: SimConfig, index: int) -> FusedDataset:
    """Draw replicate ``index`` of the configured design."""
    rng = np.random.default_rng([config.seed, index])
    n = config.n1
    x = rng.uniform(0.0, 2.0, n)
    u = confounder_mean(x) + rng.uniform(-0.5, 0.5, n)
    y0 = -x - u + rng.standard_normal(n)
    y1 = -x + 4.0 * u + rng.standard_normal(n)
    a = (rng.random(n) < expit(1.0 - 0.5 * x - 0.5 * u)).astype(np.int8)
    y = np.where(a == 1, y1, y0)

    if config.design is Design.KNOWN_INCLUSION:
        pi = np.where(y > config.y_cut, config.pi_high, config.pi_low)
        in_validation = rng.random(n) < pi
    else:
        pi = None
        in_validation = np.zeros(n, dtype=bool)
        in_validation[rng.choice(n, config.n2, replace=False)] = True

    return FusedDataset.from_arrays(
        a,
        y,
        x,
        np.where(in_validation, u, np.nan),
        in_validation,
        pi=pi,
    )


def true_tau() -> float:
    """5 E(U) by quadrature over X ~ Unif(0, 2)."""
    breaks = [np.pi / 5, 2 * np.pi / 5, 3 * np.pi / 5]
    integral, _ = quad(
        lambda x: float(confounder_mean(x)), 0.0, 2.0, points=breaks
    )
    return 5.0 * integral / 2.0


# ---------------------------------------------------------------------------
# Replicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Draw:
    """One combination on one replicate; per-source tuples share order."""

    tau2: float
    tau_hat: tuple[float, ...]
    se: tuple[float, ...]
    tau2_se: tuple[float, ...]
    ep_main: tuple[float, ...]
    ep_main_se: tuple[float, ...]


def _bootstrap_seed(config: SimConfig, index: int) -> int:
    sequence = np.random.SeedSequence([config.seed, index, 1])
    return int(sequence.generate_state(1, np.uint64)[0])


def _sources(config: SimConfig, item: MenuItem) -> tuple[VarianceSource, ...]:
    return tuple(
        s
        for s in config.variance_sources
        if not (s is VarianceSource.ANALYTIC and item.uses_matching)
    )


def _main_se(main: EstimateWithExpansion, method: Method) -> float:
    if method is Method.MATCHING:
        return math.nan
    n = main.expansion.shape[0]
    return math.sqrt(float(main.expansion @ main.expansion)) / n


def _run_item(
    config: SimConfig, d: FusedDataset, item: MenuItem, index: int
) -> _Draw:
    options = config.options
    tau2 = initial_estimate(d, item.initial, options)
    pairs = tuple(error_prone_pair(d, m, options) for m in item.error_prone)
    inputs = FusionInputs(tau2, pairs)
    scheme = (
        ResampleScheme.WEIGHTED
        if config.design is Design.KNOWN_INCLUSION
        else ResampleScheme.JOINT
    )
    results = []
    for source in _sources(config, item):
        if source is VarianceSource.BOOTSTRAP:
            variance = BootstrapSpec(
                config.bootstrap_reps, _bootstrap_seed(config, index), scheme
            )
        else:
            variance = VarianceSource.ANALYTIC
        results.append(fuse(inputs, variance, config.ci_level))
    return _Draw(
        tau2=tau2.point,
        tau_hat=tuple(r.tau_hat for r in results),
        se=tuple(r.se for r in results),
        tau2_se=tuple(math.sqrt(r.tau2_variance) for r in results),
        ep_main=tuple(main.point for main, _ in pairs),
        ep_main_se=tuple(
            _main_se(main, method)
            for (main, _), method in zip(pairs, item.error_prone)
        ),
    )


def _run_replicate(config: SimConfig, index: int) -> tuple[_Draw | None, ...]:
    try:
        d = generate(config, index)
    except CausalFuseError:
        return (None,) * len(config.menu)
    draws = []
    for item in config.menu:
        try:
            draws.append(_run_item(config, d, item, index))
        except (CausalFuseError, np.linalg.LinAlgError):
            draws.append(None)
    return tuple(draws)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimRow:
    """Monte Carlo summary of one estimator under one variance source."""

    combination: str
    estimator: str
    variance_source: str
    replicates: int
    mean: float
    bias: float
    variance: float
    mse: float
    bias_se: float
    coverage: float
    mean_se: float
    mse_reduction_pct: float | None = None


@dataclass(frozen=True)
class SimReport:
    config: SimConfig
    true_tau: float
    rows: tuple[SimRow, ...]
    failures: dict[str, int] = field(default_factory=dict)
    flagged: bool = False

    def row(
        self, combination: str, estimator: str, source: str = "analytic"
    ) -> SimRow:
        for r in self.rows:
            if (r.combination, r.estimator, r.variance_source) == (
                combination,
                estimator,
                str(source),
            ):
                return r
        raise KeyError((combination, estimator, source))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "true_tau": self.true_tau,
            "rows": [asdict(r) for r in self.rows],
            "failures": dict(self.failures),
            "flagged": self.flagged,
        }

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(r) for r in self.rows])
        frame.insert(0, "n2", self.config.n2)
        frame.insert(0, "n1", self.config.n1)
        return frame

    def to_json(self, path: str | PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    def to_csv(self, path: str | PathLike) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def _summarize(
    combination: str,
    estimator: str,
    source: VarianceSource,
    points: np.ndarray,
    ses: np.ndarray,
    truth: float,
    level: float,
) -> SimRow:
    z = float(norm.ppf(0.5 + level / 2.0))
    reps = points.shape[0]
    mean = float(points.mean())
    bias = mean - truth
    variance = float(points.var())
    covered = np.abs(points - truth) <= z * ses
    coverage = math.nan if np.isnan(ses).any() else float(covered.mean())
    return SimRow(
        combination=combination,
        estimator=estimator,
        variance_source=str(source),
        replicates=reps,
        mean=mean,
        bias=bias,
        variance=variance,
        mse=float(np.mean((points - truth) ** 2)),
        bias_se=math.sqrt(variance / reps),
        coverage=coverage,
        mean_se=float(ses.mean()),
    )


def _aggregate(
    config: SimConfig, outcomes: list[tuple[_Draw | None, ...]], truth: float
) -> tuple[list[SimRow], dict[str, int]]:
    rows: list[SimRow] = []
    failures: dict[str, int] = {}
    for k, item in enumerate(config.menu):
        draws = [o[k] for o in outcomes if o[k] is not None]
        failures[item.label] = len(outcomes) - len(draws)
        if not draws:
            continue
        tau2 = np.array([d.tau2 for d in draws])
        for s, source in enumerate(_sources(config, item)):
            initial = _summarize(
                item.label,
                "initial",
                source,
                tau2,
                np.array([d.tau2_se[s] for d in draws]),
                truth,
                config.ci_level,
            )
            fused = _summarize(
                item.label,
                "fused",
                source,
                np.array([d.tau_hat[s] for d in draws]),
                np.array([d.se[s] for d in draws]),
                truth,
                config.ci_level,
            )
            reduction = (
                100.0 * (1.0 - fused.mse / initial.mse)
                if initial.mse > 0
                else 0.0
            )
            rows.append(initial)
            rows.append(
                SimRow(**{**asdict(fused), "mse_reduction_pct": reduction})
            )
            for j, method in enumerate(item.error_prone):
                rows.append(
                    _summarize(
                        item.label,
                        f"error-prone:{method}",
                        source,
                        np.array([d.ep_main[j] for d in draws]),
                        np.array([d.ep_main_se[j] for d in draws]),
                        truth,
                        config.ci_level,
                    )
                )
    return rows, failures


def run_monte_carlo(config: SimConfig) -> SimReport:
    """
    Run every configured combination on ``config.reps`` replicates.

    Replicates run in parallel; results are gathered in replicate order
    and summarized sequentially. A combination that fails on a replicate
    (a DataError or NumericalError) is excluded there and counted; the run
    is flagged when any combination fails on more than 1% of replicates.
    """
    logger.info(
        "simulating n1=%d n2=%d reps=%d design=%s",
        config.n1,
        config.n2,
        config.reps,
        config.design,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        outcomes = (
            par_replicates(config.reps)
            .map(partial(_run_replicate, config))
            .collect()
        )

    truth = true_tau()
    rows, failures = _aggregate(config, outcomes, truth)
    limit = FAILURE_TOLERANCE * config.reps
    flagged = any(count > limit for count in failures.values())
    for label, count in failures.items():
        if count:
            logger.info(
                "%s failed on %d of %d replicates", label, count, config.reps
            )
    if flagged:
        logger.warning("more than 1%% of replicates failed; run flagged")
    return SimReport(
        config=config,
        true_tau=truth,
        rows=tuple(rows),
        failures=failures,
        flagged=flagged,
    )


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _full_size_preset() -> tuple[SimConfig, ...]:
    return tuple(
        SimConfig(
            n1=1000,
            n2=n2,
            reps=2000,
            menu=SAME_TYPE_MENU,
            variance_sources=(
                VarianceSource.ANALYTIC,
                VarianceSource.BOOTSTRAP,
            ),
            bootstrap_reps=500,
        )
        for n2 in (200, 500)
    )


def _smoke_preset() -> tuple[SimConfig, ...]:
    return (
        SimConfig(
            n1=200,
            n2=60,
            reps=4,
            menu=SAME_TYPE_MENU,
            variance_sources=(
                VarianceSource.ANALYTIC,
                VarianceSource.BOOTSTRAP,
            ),
            bootstrap_reps=50,
        ),
    )


PRESETS = {
    "paper": _full_size_preset,
    "full": _full_size_preset,
    "smoke": _smoke_preset,
}


def preset(name: str) -> tuple[SimConfig, ...]:
    """
    Named configuration sets.

    ``paper`` (alias ``full``) runs (1000, 200) and (1000, 500) with 2000
    replications; ``smoke`` is a seconds-long run of the same menu.
    """
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None
