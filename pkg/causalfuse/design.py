"""
Two-phase study planning.

(A, X, Y) costs C1 per unit and is measured on all n1 units; U costs an
extra C2 per unit and is measured on n2 of them. For a fused estimator with
R^2 = gamma / v2, the variance

    v2 / n2 - (1/n2 - 1/n1) gamma = v2 {(1 - R^2) / n2 + R^2 / n1}

is minimized under n1 C1 + n2 C2 = C at

    rho* = n2 / n1 = sqrt((1 - R^2) C1 / (R^2 C2)).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .errors import EstimationWarning

MIN_VALIDATION = 2


@dataclass(frozen=True)
class AllocationProblem:
    """
    Attributes:
        c1: Per-unit cost of (A, X, Y)
        c2: Per-unit cost of U
        budget: Total budget C
        r_squared: Share of v2 explained by the error-prone differences,
            e.g. FusionResult.variance_reduction from a pilot
    """

    c1: float
    c2: float
    budget: float
    r_squared: float

    def __post_init__(self) -> None:
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("unit costs must be positive")
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if not 0.0 <= self.r_squared <= 1.0:
            raise ValueError("r_squared must lie in [0, 1]")


@dataclass(frozen=True)
class Allocation:
    rho: float
    n1: int
    n2: int
    cost: float
    clamped: bool = False

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "n1": self.n1,
            "n2": self.n2,
            "cost": self.cost,
            "clamped": self.clamped,
        }


def allocation_variance(
    n1: int, n2: int, r_squared: float, v2: float = 1.0
) -> float:
    """Variance of the fused estimator for a given allocation."""
    if not 0 < n2 <= n1:
        raise ValueError("need 0 < n2 <= n1")
    return v2 * ((1.0 - r_squared) / n2 + r_squared / n1)


def optimal_allocation(p: AllocationProblem) -> Allocation:
    """
    Cost-optimal (n1, n2).

    The continuous optimum is floored to integers, so the budget is never
    exceeded. rho* > 1 is clamped to 1 (U is measured on a subset of the
    main units); rho* = 0 is raised to the smallest feasible n2 = 2. Both
    clamps warn.

    Raises:
        ValueError: The budget cannot pay for two fully measured units
    """
    if p.budget < MIN_VALIDATION * (p.c1 + p.c2):
        raise ValueError(
            f"budget {p.budget} cannot cover {MIN_VALIDATION} validation "
            "units"
        )

    clamped = False
    if p.r_squared == 0.0:
        rho = math.inf
    else:
        rho = math.sqrt((1.0 - p.r_squared) * p.c1 / (p.r_squared * p.c2))
    if rho > 1.0:
        warnings.warn(
            f"optimal ratio {rho:.4g} exceeds 1; measuring U on every unit",
            EstimationWarning,
            stacklevel=2,
        )
        rho = 1.0
        clamped = True

    n1_exact = p.budget / (p.c1 + rho * p.c2)
    n1 = math.floor(n1_exact)
    n2 = math.floor(rho * n1_exact)
    if n2 < MIN_VALIDATION:
        warnings.warn(
            "validation data add no information at this R^2; using the "
            f"minimum of {MIN_VALIDATION} validation units",
            EstimationWarning,
            stacklevel=2,
        )
        n2 = MIN_VALIDATION
        n1 = math.floor((p.budget - n2 * p.c2) / p.c1)
        clamped = True

    cost = n1 * p.c1 + n2 * p.c2
    if cost > p.budget or n2 > n1:
        raise ValueError("no feasible allocation within the budget")
    return Allocation(rho=rho, n1=n1, n2=n2, cost=cost, clamped=clamped)
