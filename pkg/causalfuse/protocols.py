"""
Interfaces between the work splitter and replicate loops.

A block producer yields replicate indices; a block consumer turns the
indices of one block into a partial result. ``bridge`` splits both in
lockstep and joins the partial results left block first, so a loop of B
replicates returns results in index order whatever the thread count.
"""

from __future__ import annotations

from abc import abstractmethod
from collections.abc import Iterator
from typing import Protocol, TypeVar

T_co = TypeVar("T_co", covariant=True)
T_contra = TypeVar("T_contra", contravariant=True)
R = TypeVar("R")


class BlockConsumer(Protocol[T_contra, R]):
    """Turns one block of replicate indices into a partial result."""

    @abstractmethod
    def consume_iter(self, iterator: Iterator[T_contra]) -> R:
        """Run every replicate of the block, in index order."""
        ...

    @abstractmethod
    def split(
        self,
    ) -> tuple[BlockConsumer[T_contra, R], BlockConsumer[T_contra, R]]:
        """Consumers for the lower and the upper half of a block."""
        ...

    @abstractmethod
    def reduce(self, left: R, right: R) -> R:
        """Join the partial results of two adjacent blocks, lower first."""
        ...


class BlockProducer(Protocol[T_co]):
    """A block of replicate indices that can be cut in two."""

    @abstractmethod
    def __len__(self) -> int: ...

    @abstractmethod
    def split_at(
        self, index: int
    ) -> tuple[BlockProducer[T_co], BlockProducer[T_co]]:
        """
        Cut the block after ``index`` replicates.

        Args:
            index: Replicates kept in the lower half, 0 < index < len(self)
        """
        ...

    @abstractmethod
    def into_iter(self) -> Iterator[T_co]:
        """Indices of the block, ascending."""
        ...
