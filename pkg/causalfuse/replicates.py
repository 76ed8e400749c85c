from __future__ import annotations

from collections.abc import Callable

from .bridge import bridge
from .consumers import OrderedCollect, ReplicateMap
from .producers import ReplicateProducer


class ParallelReplicates[T]:
    """
    Ordered parallel iterator over replicate indices.

    Only the operations replicate loops need are offered: ``map`` to run a
    module-level worker per index and ``collect`` to gather results in
    index order. Anything order-sensitive (sums, covariances) is done by
    the caller on the collected list, so outputs do not depend on the
    thread count.
    """

    def __init__(
        self,
        count: int,
        func: Callable[[int], T] | None = None,
        min_len: int | None = None,
    ):
        if count < 0:
            raise ValueError("Replicate count cannot be negative")
        self.count = count
        self.func = func
        self.min_len = min_len

    def __len__(self) -> int:
        return self.count

    def with_min_len(self, min_len: int) -> ParallelReplicates[T]:
        """
        Do not split blocks smaller than ``min_len`` replicates.

        Args:
            min_len: Smallest block handed to one task (must be >= 1)

        Returns:
            A new iterator with the same mapping
        """
        if min_len < 1:
            raise ValueError("Minimum block length must be at least 1")
        return ParallelReplicates(self.count, self.func, min_len)

    def map[U](self, func: Callable[[T], U]) -> ParallelReplicates[U]:
        """
        Apply a function to each replicate result.

        Args:
            func: Function to apply; prefer module-level functions or
                ``functools.partial`` over closures

        Returns:
            A new iterator of transformed elements
        """
        inner = self.func
        if inner is None:
            return ParallelReplicates(self.count, func, self.min_len)
        return ParallelReplicates(
            self.count, _Compose(inner, func), self.min_len
        )

    def collect(self) -> list[T]:
        """
        Run every replicate and gather the results in index order.

        Returns:
            A list whose b-th entry belongs to replicate b
        """
        if self.count == 0:
            return []
        consumer = OrderedCollect()
        if self.func is not None:
            consumer = ReplicateMap(consumer, self.func)
        return bridge(
            ReplicateProducer(0, self.count), consumer, min_len=self.min_len
        )


class _Compose:
    # Plain callable object: no closure cells shared between workers.
    def __init__(self, first: Callable, second: Callable):
        self.first = first
        self.second = second

    def __call__(self, item):
        return self.second(self.first(item))


def par_replicates(count: int) -> ParallelReplicates[int]:
    """
    Create a parallel iterator over replicate indices ``0..count-1``.

    Args:
        count: Number of replicates

    Returns:
        A ParallelReplicates yielding the indices themselves

    Example:
        >>> par_replicates(4).map(str).collect()
        ['0', '1', '2', '3']
    """
    return ParallelReplicates(count)
