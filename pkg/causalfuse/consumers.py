from __future__ import annotations

from collections.abc import Callable, Iterator

from .protocols import BlockConsumer


class ReplicateMap[T, U, R]:
    """
    Runs a replicate function on every index of a block.

    The function receives the replicate index and must derive its random
    stream from it alone; the results go on to ``base``.
    """

    def __init__(self, base: BlockConsumer[U, R], func: Callable[[T], U]):
        self.base = base
        self.func = func

    def consume_iter(self, iterator: Iterator[T]) -> R:
        return self.base.consume_iter(self.func(b) for b in iterator)

    def split(self) -> tuple[ReplicateMap[T, U, R], ReplicateMap[T, U, R]]:
        lower, upper = self.base.split()
        return ReplicateMap(lower, self.func), ReplicateMap(upper, self.func)

    def reduce(self, left: R, right: R) -> R:
        return self.base.reduce(left, right)


class OrderedCollect[T]:
    """Gathers replicate results into a list indexed by replicate."""

    def consume_iter(self, iterator: Iterator[T]) -> list[T]:
        return list(iterator)

    def split(self) -> tuple[OrderedCollect[T], OrderedCollect[T]]:
        return OrderedCollect(), OrderedCollect()

    def reduce(self, left: list[T], right: list[T]) -> list[T]:
        # lower block first
        left.extend(right)
        return left
