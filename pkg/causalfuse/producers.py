from __future__ import annotations

from collections.abc import Iterator


class ReplicateProducer:
    """
    Producer over a contiguous block of replicate indices.

    Replicate ``b`` always carries index ``b``, whichever thread runs it, so
    per-replicate random streams keyed on the index are scheduling-free.
    """

    def __init__(self, start: int, stop: int):
        """
        Create a replicate producer.

        Args:
            start: First replicate index (inclusive)
            stop: Last replicate index (exclusive)
        """
        if stop < start:
            raise ValueError(f"Invalid replicate block: [{start}, {stop})")
        self.start = start
        self.stop = stop

    def __len__(self) -> int:
        return self.stop - self.start

    def split_at(
        self, index: int
    ) -> tuple[ReplicateProducer, ReplicateProducer]:
        """
        Split this block at the given offset.

        Args:
            index: Split position (0 < index < len(self))

        Returns:
            Tuple of (left_block, right_block)
        """
        if index <= 0 or index >= len(self):
            raise ValueError(f"Invalid split index: {index}")

        mid = self.start + index
        return (
            ReplicateProducer(self.start, mid),
            ReplicateProducer(mid, self.stop),
        )

    def into_iter(self) -> Iterator[int]:
        return iter(range(self.start, self.stop))
