from __future__ import annotations

import math
from concurrent.futures import Future
from typing import TypeVar

from .config import ThreadPoolConfig
from .protocols import BlockConsumer, BlockProducer

T = TypeVar("T")
R = TypeVar("R")


def bridge[T, R](
    producer: BlockProducer[T],
    consumer: BlockConsumer[T, R],
    depth: int = 0,
    min_len: int | None = None,
) -> R:
    """
    Run a producer through a consumer with divide-and-conquer parallelism.

    1. If the block is small, too deep, or we are already inside a pool
       worker, execute sequentially
    2. Otherwise split producer and consumer at the midpoint
    3. Submit the left half to the pool and run the right half inline
    4. Reduce left-then-right, so results keep index order

    Args:
        producer: The producer generating elements
        consumer: The consumer processing elements
        depth: Current recursion depth
        min_len: Block size below which work is not split (defaults to the
            global ``min_split_size``)

    Returns:
        The result from the consumer
    """
    config = ThreadPoolConfig.global_config()
    length = len(producer)
    threshold = config.min_split_size if min_len is None else min_len

    if (
        length <= threshold
        or depth >= config.max_depth
        or (depth == 0 and config.in_worker())
    ):
        return sequential_bridge(producer, consumer)

    if depth == 0:
        with config.region():
            return _split_join(producer, consumer, depth, min_len)
    return _split_join(producer, consumer, depth, min_len)


def _split_join[T, R](
    producer: BlockProducer[T],
    consumer: BlockConsumer[T, R],
    depth: int,
    min_len: int | None,
) -> R:
    config = ThreadPoolConfig.global_config()
    mid = len(producer) // 2
    if mid == 0:
        return sequential_bridge(producer, consumer)

    left_producer, right_producer = producer.split_at(mid)
    left_consumer, right_consumer = consumer.split()

    num_threads = config.get_num_threads()
    max_parallel_depth = max(2, min(4, int(math.log2(num_threads)) + 1))

    if depth < max_parallel_depth and num_threads > 1:
        executor = config.get_executor()

        left_future: Future[R] = executor.submit(
            bridge, left_producer, left_consumer, depth + 1, min_len
        )

        right_result = bridge(
            right_producer, right_consumer, depth + 1, min_len
        )

        left_result = left_future.result()
    else:
        left_result = bridge(left_producer, left_consumer, depth + 1, min_len)
        right_result = bridge(
            right_producer, right_consumer, depth + 1, min_len
        )

    return consumer.reduce(left_result, right_result)


def sequential_bridge[T, R](
    producer: BlockProducer[T], consumer: BlockConsumer[T, R]
) -> R:
    """
    Bridge a producer and consumer sequentially (no parallelism).

    Args:
        producer: The producer generating elements
        consumer: The consumer processing elements

    Returns:
        The result from the consumer
    """
    return consumer.consume_iter(producer.into_iter())
