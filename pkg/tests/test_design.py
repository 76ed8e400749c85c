"""
Tests for two-phase sample allocation.
"""

import math

import pytest

from causalfuse import (
    AllocationProblem,
    EstimationWarning,
    allocation_variance,
    optimal_allocation,
)


class TestAllocationProblem:
    """Tests for AllocationProblem validation."""

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"c1": 0.0},
            {"c2": -1.0},
            {"budget": 0.0},
            {"r_squared": 1.2},
            {"r_squared": -0.1},
        ],
    )
    def test_invalid(self, kwargs):
        """Test invalid costs, budgets and R^2 are rejected."""
        params = {"c1": 1.0, "c2": 1.0, "budget": 100.0, "r_squared": 0.5}
        params.update(kwargs)
        with pytest.raises(ValueError):
            AllocationProblem(**params)


class TestOptimalAllocation:
    """Tests for optimal_allocation."""

    def test_half_ratio(self):
        """Test R^2 = 0.8 with equal costs gives rho = 0.5, 666 / 333."""
        allocation = optimal_allocation(AllocationProblem(1, 1, 1000, 0.8))
        assert allocation.rho == pytest.approx(0.5)
        assert (allocation.n1, allocation.n2) == (666, 333)
        assert allocation.cost <= 1000
        assert not allocation.clamped

    def test_cost_ratio(self):
        """Test R^2 = 0.5 with C2 = 4 C1 gives rho = 0.5."""
        allocation = optimal_allocation(AllocationProblem(1, 4, 1000, 0.5))
        assert allocation.rho == pytest.approx(0.5)
        assert allocation.n1 == 333
        assert allocation.n2 == 166

    def test_three_quarters(self):
        """Test R^2 = 0.75 with equal costs."""
        allocation = optimal_allocation(AllocationProblem(1, 1, 1000, 0.75))
        assert allocation.rho == pytest.approx(1 / math.sqrt(3))
        assert (allocation.n1, allocation.n2) == (633, 366)
        assert allocation.n1 + allocation.n2 <= 1000

    def test_no_information_clamps_to_one(self):
        """Test R^2 = 0 measures U on every unit."""
        with pytest.warns(EstimationWarning, match="exceeds 1"):
            allocation = optimal_allocation(AllocationProblem(1, 1, 100, 0.0))
        assert allocation.rho == 1.0
        assert allocation.n1 == allocation.n2 == 50
        assert allocation.clamped

    def test_full_information_keeps_minimum(self):
        """Test R^2 = 1 keeps the minimum validation sample."""
        with pytest.warns(EstimationWarning, match="no information"):
            allocation = optimal_allocation(AllocationProblem(1, 1, 100, 1.0))
        assert allocation.n2 == 2
        assert allocation.n1 == 98
        assert allocation.clamped

    def test_budget_too_small(self):
        """Test a budget below two complete units is rejected."""
        with pytest.raises(ValueError, match="cannot cover"):
            optimal_allocation(AllocationProblem(1, 2, 5, 0.5))

    @pytest.mark.parametrize("r_squared", [0.5, 0.8, 0.95])
    def test_budget_feasible(self, r_squared):
        """Test the allocation never exceeds the budget."""
        problem = AllocationProblem(1.5, 3.0, 750, r_squared)
        allocation = optimal_allocation(problem)
        assert allocation.n1 * 1.5 + allocation.n2 * 3.0 <= 750
        assert 2 <= allocation.n2 <= allocation.n1

    def test_monotone_in_r_squared(self):
        """Test rho decreases as R^2 grows."""
        rhos = [
            optimal_allocation(AllocationProblem(1, 1, 1000, r)).rho
            for r in (0.6, 0.7, 0.8, 0.9)
        ]
        assert rhos == sorted(rhos, reverse=True)

    def test_monotone_in_cost_ratio(self):
        """Test rho decreases as U gets more expensive."""
        rhos = [
            optimal_allocation(AllocationProblem(1, c2, 1000, 0.8)).rho
            for c2 in (1.0, 2.0, 4.0, 8.0)
        ]
        assert rhos == sorted(rhos, reverse=True)

    def test_to_dict(self):
        """Test the serialized allocation."""
        allocation = optimal_allocation(AllocationProblem(1, 1, 1000, 0.8))
        assert allocation.to_dict()["n2"] == 333


class TestAllocationVariance:
    """Tests for allocation_variance."""

    def test_formula(self):
        """Test v2 {(1 - R^2)/n2 + R^2/n1}."""
        assert allocation_variance(100, 20, 0.5, v2=2.0) == pytest.approx(
            2.0 * (0.5 / 20 + 0.5 / 100)
        )

    def test_validation_only(self):
        """Test n1 = n2 gives v2 / n2."""
        assert allocation_variance(50, 50, 0.7) == pytest.approx(1 / 50)

    def test_invalid_sizes(self):
        """Test n2 > n1 is rejected."""
        with pytest.raises(ValueError):
            allocation_variance(10, 20, 0.5)
