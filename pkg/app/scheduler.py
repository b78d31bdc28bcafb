"""
调度器模块

重复实验按固定大小分块，每块由主种子派生独立的随机流，
在线程池中并发执行后按块顺序合并；结果与线程数无关。
"""

import concurrent.futures
import logging
from datetime import datetime
from typing import Callable, List, Optional, TypeVar

import numpy as np

from .config import config

logger = logging.getLogger(__name__)

T = TypeVar("T")


def derive_rngs(seed: int, count: int) -> List[np.random.Generator]:
    """由主种子派生 count 个互不相关的生成器"""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(child) for child in children]


class ReplicationScheduler:
    """重复实验调度器"""

    def __init__(self, max_workers: Optional[int] = None, chunk_size: Optional[int] = None):
        self.max_workers = max_workers or config.THREADS
        self.chunk_size = chunk_size or config.CHUNK_SIZE

    def chunks(self, total: int) -> List[int]:
        """把 total 次重复切分为固定大小的块"""
        sizes = [self.chunk_size] * (total // self.chunk_size)
        if total % self.chunk_size:
            sizes.append(total % self.chunk_size)
        return sizes

    def run(self, task: Callable[[int, np.random.Generator], T], total: int, seed: int) -> List[T]:
        """
        执行 total 次重复

        Args:
            task: task(块内重复次数, 随机生成器) -> 块结果
            total: 重复总次数
            seed: 主种子

        Returns:
            按块顺序排列的结果列表
        """
        sizes = self.chunks(total)
        if not sizes:
            return []
        rngs = derive_rngs(seed, len(sizes))
        start_time = datetime.utcnow()

        results: List[Optional[T]] = [None] * len(sizes)
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {
                executor.submit(task, size, rng): i
                for i, (size, rng) in enumerate(zip(sizes, rngs))
            }
            for future in concurrent.futures.as_completed(futures):
                results[futures[future]] = future.result()

        duration = (datetime.utcnow() - start_time).total_seconds()
        logger.debug(
            f"{total} replications in {len(sizes)} chunks on {self.max_workers} threads ({duration:.2f}s)"
        )
        return results
