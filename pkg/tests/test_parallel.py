"""
Tests for the ordered replicate engine.
"""

from functools import partial

import numpy as np
import pytest

from causalfuse import get_num_threads, par_replicates, set_num_threads
from causalfuse.config import ThreadPoolConfig
from causalfuse.consumers import OrderedCollect, ReplicateMap
from causalfuse.producers import ReplicateProducer


def _square(b: int) -> int:
    return b * b


def _draw(seed: int, b: int) -> float:
    return float(np.random.default_rng([seed, b]).standard_normal())


def _nested(b: int) -> int:
    return sum(par_replicates(5).map(_square).collect()) + b


class TestParReplicates:
    """Tests for par_replicates."""

    def test_indices_in_order(self):
        """Test collect returns indices in order."""
        assert par_replicates(100).collect() == list(range(100))

    def test_map(self):
        """Test map applies to every index in order."""
        result = par_replicates(50).map(_square).collect()
        assert result == [b * b for b in range(50)]

    def test_chained_map(self):
        """Test two maps compose."""
        result = par_replicates(10).map(_square).map(str).collect()
        assert result == [str(b * b) for b in range(10)]

    def test_empty(self):
        """Test zero replicates."""
        assert par_replicates(0).map(_square).collect() == []

    def test_single(self):
        """Test a single replicate."""
        assert par_replicates(1).map(_square).collect() == [0]

    def test_negative_count(self):
        """Test negative count is rejected."""
        with pytest.raises(ValueError):
            par_replicates(-1)

    def test_with_min_len(self):
        """Test min_len keeps results and order."""
        result = par_replicates(200).with_min_len(64).map(_square).collect()
        assert result == [b * b for b in range(200)]

    def test_with_min_len_invalid(self):
        """Test min_len below 1 is rejected."""
        with pytest.raises(ValueError):
            par_replicates(10).with_min_len(0)

    def test_nested_calls(self):
        """Test a replicate loop inside a worker runs to completion."""
        result = par_replicates(20).map(_nested).collect()
        assert result == [30 + b for b in range(20)]


class TestDeterminism:
    """Tests for scheduling independence."""

    def test_thread_count_does_not_change_results(self):
        """Test per-index streams give identical results for 1 and 4 threads."""
        original = get_num_threads()
        try:
            set_num_threads(1)
            single = par_replicates(300).map(partial(_draw, 11)).collect()
            set_num_threads(4)
            multi = par_replicates(300).map(partial(_draw, 11)).collect()
        finally:
            set_num_threads(original)
        assert single == multi


class TestThreadConfiguration:
    """Tests for thread configuration."""

    def test_set_num_threads(self):
        """Test setting number of threads."""
        original = get_num_threads()
        try:
            set_num_threads(3)
            assert get_num_threads() == 3
        finally:
            set_num_threads(original)

    def test_invalid_thread_count(self):
        """Test zero threads is rejected."""
        with pytest.raises(ValueError):
            set_num_threads(0)

    def test_environment_override(self, monkeypatch):
        """Test the environment variable sets the default."""
        monkeypatch.setenv("CAUSALFUSE_NUM_THREADS", "5")
        assert ThreadPoolConfig().get_num_threads() == 5

    def test_region_marks_thread(self):
        """Test region marks and then restores the calling thread."""
        config = ThreadPoolConfig()
        assert not config.in_worker()
        with config.region():
            assert config.in_worker()
        assert not config.in_worker()


class TestReplicateProducer:
    """Tests for the replicate block producer."""

    def test_split(self):
        """Test splitting keeps absolute indices."""
        left, right = ReplicateProducer(10, 20).split_at(4)
        assert list(left.into_iter()) == [10, 11, 12, 13]
        assert list(right.into_iter()) == list(range(14, 20))

    def test_invalid_split(self):
        """Test split offsets outside the block are rejected."""
        with pytest.raises(ValueError):
            ReplicateProducer(0, 5).split_at(5)

    def test_invalid_block(self):
        """Test reversed bounds are rejected."""
        with pytest.raises(ValueError):
            ReplicateProducer(5, 2)


class TestReplicateMap:
    """Tests for the per-replicate consumers."""

    def test_split_halves_join_in_order(self):
        """Test mapped halves reduce to the sequential result."""
        consumer = ReplicateMap(OrderedCollect(), _square)
        lower, upper = consumer.split()
        left, right = ReplicateProducer(0, 10).split_at(6)
        joined = consumer.reduce(
            lower.consume_iter(left.into_iter()),
            upper.consume_iter(right.into_iter()),
        )
        assert joined == [_square(b) for b in range(10)]
