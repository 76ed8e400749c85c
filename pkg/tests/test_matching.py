"""
Tests for nearest-neighbour matching and its bias correction.
"""

import numpy as np
import pytest

from causalfuse import (
    CovariateSet,
    DataError,
    DistanceScaling,
    FusedDataset,
    ModelFit,
    ModelKind,
    ModelSpec,
    find_matches,
    validation_view,
)
from causalfuse.matching import bias_correction, matching_estimate_raw

X_ONLY = CovariateSet.X_ONLY


def _view(a, y, x, pi=None):
    n = len(a)
    d = FusedDataset.from_arrays(
        a=a,
        y=y,
        x=x,
        u=np.zeros(n),
        in_validation=np.ones(n, dtype=bool),
        pi=pi,
    )
    return validation_view(d)


def _line(arm, intercept=0.0, slope=1.0):
    """A fitted outcome regression fixed by hand."""
    return ModelFit(
        spec=ModelSpec(ModelKind.OUTCOME_LINEAR, X_ONLY, arm=arm),
        coefficients=np.array([intercept, slope]),
        scores=np.zeros((1, 2)),
        bread=-np.eye(2),
        converged=True,
        iterations=0,
        weights_used=np.ones(1),
    )


FOUR = {"a": [1, 0, 1, 0], "y": [2.0, 1.0, 5.0, 3.0], "x": [0, 0.1, 1, 0.9]}


class TestFindMatches:
    """Tests for find_matches."""

    def test_two_units(self):
        """Test two units match each other."""
        matches = find_matches(_view([1, 0], [2.0, 1.0], [0.0, 1.0]), X_ONLY)
        np.testing.assert_array_equal(matches.match_sets, [[1], [0]])
        np.testing.assert_array_equal(matches.counts, [1.0, 1.0])

    def test_four_units(self):
        """Test the nearest opposite-arm unit is chosen."""
        matches = find_matches(_view(**FOUR), X_ONLY)
        np.testing.assert_array_equal(
            matches.match_sets, [[1], [0], [3], [2]]
        )
        np.testing.assert_array_equal(matches.counts, [1.0, 1.0, 1.0, 1.0])

    def test_tie_goes_to_lower_row(self):
        """Test an exact distance tie picks the lower row index."""
        view = _view([1, 0, 0, 1, 0], [0.0] * 5, [0.0, 3.0, 1.0, 5.0, -1.0])
        matches = find_matches(view, X_ONLY)
        assert matches.match_sets[0, 0] == 2

    def test_opposite_arm_only(self, sim_dataset):
        """Test every match belongs to the other arm."""
        view = validation_view(sim_dataset)
        matches = find_matches(view, CovariateSet.XU, M=3)
        a = view.treatment
        assert matches.match_sets.shape == (view.n, 3)
        assert (a[matches.match_sets] == (1 - a)[:, None]).all()

    def test_count_identity(self, sim_dataset):
        """Test counts per arm sum to M times the other arm's size."""
        view = validation_view(sim_dataset)
        matches = find_matches(view, CovariateSet.XU, M=2)
        a = view.treatment
        for arm in (0, 1):
            total = matches.counts[a == arm].sum()
            assert total == pytest.approx(2 * (a == 1 - arm).sum())

    def test_weighted_counts(self):
        """Test weighted counts follow pi_j sum_l pi_l^{-1} 1{j in J_l}."""
        pi = np.array([0.5, 0.25, 0.8, 0.4, 1.0])
        view = _view([1, 0, 1, 0, 1], [0.0] * 5, [0.0, 0.2, 0.5, 0.9, 1.0], pi)
        matches = find_matches(view, X_ONLY)
        expected = np.zeros(5)
        for unit, members in enumerate(matches.match_sets):
            for j in members:
                expected[j] += pi[j] / pi[unit]
        assert matches.weighted
        np.testing.assert_allclose(matches.counts, expected)

    def test_arm_smaller_than_m(self):
        """Test M larger than an arm is rejected."""
        view = _view([1, 0, 0], [0.0] * 3, [0.0, 1.0, 2.0])
        with pytest.raises(DataError, match="arm 1 has 1 units"):
            find_matches(view, X_ONLY, M=2)

    def test_zero_variance_standardized(self):
        """Test a constant matching variable cannot be standardized."""
        view = _view([1, 0, 1, 0], [0.0] * 4, [1.0, 1.0, 1.0, 1.0])
        with pytest.raises(DataError, match="zero-variance matching"):
            find_matches(
                view, X_ONLY, distance_scaling=DistanceScaling.STANDARDIZED
            )

    def test_invalid_m(self):
        """Test M below 1 is rejected."""
        with pytest.raises(ValueError):
            find_matches(_view(**FOUR), X_ONLY, M=0)


class TestMatchingEstimate:
    """Tests for the raw matching estimator and its bias correction."""

    def test_single_pair(self):
        """Test one pair gives the outcome difference."""
        view = _view([1, 0], [2.0, 1.0], [0.0, 1.0])
        matches = find_matches(view, X_ONLY)
        assert matching_estimate_raw(view, matches) == pytest.approx(1.0)

    def test_four_units(self):
        """Test contributions (1, 1, 2, 2) average to 1.5."""
        view = _view(**FOUR)
        matches = find_matches(view, X_ONLY)
        assert matching_estimate_raw(view, matches) == pytest.approx(1.5)

    def test_identical_outcomes(self):
        """Test identical outcomes give zero."""
        view = _view([1, 0, 1, 0], [4.0] * 4, [0.0, 0.3, 0.7, 1.0])
        matches = find_matches(view, X_ONLY)
        assert matching_estimate_raw(view, matches) == pytest.approx(0.0)

    def test_exact_pairs_difference_in_means(self):
        """Test duplicated covariates give the paired difference in means."""
        view = _view(
            [1, 0, 1, 0, 1, 0],
            [3.0, 1.0, 4.0, 1.5, 2.0, 2.5],
            [0.0, 0.0, 1.0, 1.0, 2.0, 2.0],
        )
        matches = find_matches(view, X_ONLY)
        expected = np.mean([3.0 - 1.0, 4.0 - 1.5, 2.0 - 2.5])
        assert matching_estimate_raw(view, matches) == pytest.approx(expected)

    def test_constant_regression_no_correction(self):
        """Test constant fitted regressions give zero correction."""
        view = _view(**FOUR)
        matches = find_matches(view, X_ONLY)
        mu0 = _line(0, intercept=2.0, slope=0.0)
        mu1 = _line(1, intercept=-1.0, slope=0.0)
        assert bias_correction(view, matches, mu0, mu1) == 0.0

    def test_symmetric_discrepancies_cancel(self):
        """Test mu(x) = x on the four-unit example cancels exactly."""
        view = _view(**FOUR)
        matches = find_matches(view, X_ONLY)
        correction = bias_correction(view, matches, _line(0), _line(1))
        assert correction == pytest.approx(0.0, abs=1e-12)

    def test_asymmetric_discrepancies(self):
        """Test mu(x) = x with unequal gaps gives correction 0.05."""
        view = _view([1, 0, 1, 0], [2.0, 1.0, 5.0, 3.0], [0.0, 0.1, 1.0, 0.8])
        matches = find_matches(view, X_ONLY)
        correction = bias_correction(view, matches, _line(0), _line(1))
        assert correction == pytest.approx(0.05)
        corrected = matching_estimate_raw(view, matches) - correction
        assert corrected == pytest.approx(1.45)

    def test_exact_matches_no_correction(self):
        """Test exact matches give zero correction for any regression."""
        view = _view([1, 0, 1, 0], [1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 1.0, 1.0])
        matches = find_matches(view, X_ONLY)
        mu0 = _line(0, intercept=1.0, slope=-3.0)
        mu1 = _line(1, intercept=0.5, slope=7.0)
        assert bias_correction(view, matches, mu0, mu1) == 0.0
