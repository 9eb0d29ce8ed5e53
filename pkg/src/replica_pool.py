"""
副本并行执行

每个任务是 (副本号, 参数)；结果按副本号顺序返回，与 worker 数无关。
workers = 1 时在当前进程内执行。出错时在异常消息前加上副本号。
"""

import logging
import sys
import time
from functools import partial
from multiprocessing import Pool
from typing import Any, Callable, List, Sequence, Tuple

from tqdm import tqdm

from .errors import SBPLabError

logger = logging.getLogger(__name__)


def _timed_call(func: Callable[[Any], Any], task: Tuple[int, Any]) -> Tuple[Any, float]:
    replica, payload = task
    start = time.perf_counter()
    try:
        result = func(payload)
    except SBPLabError as e:
        raise type(e)(f"replica {replica}: {e}") from e
    return result, time.perf_counter() - start


def run_replicas(
    func: Callable[[Any], Any],
    tasks: Sequence[Tuple[int, Any]],
    *,
    workers: int = 1,
    desc: str = "replicas",
) -> Tuple[List[Any], List[float]]:
    """
    执行 func(payload)，返回 (结果列表, 每个任务的耗时)，顺序与 tasks 一致。

    func 必须是模块顶层函数（或其 partial），以便跨进程传递。
    """
    call = partial(_timed_call, func)
    show = sys.stderr.isatty()
    results: List[Any] = []
    timings: List[float] = []
    if workers <= 1 or len(tasks) <= 1:
        iterator = map(call, tasks)
        for result, seconds in tqdm(iterator, total=len(tasks), desc=desc, disable=not show):
            results.append(result)
            timings.append(seconds)
    else:
        with Pool(processes=workers) as pool:
            iterator = pool.imap(call, tasks, chunksize=1)
            for result, seconds in tqdm(iterator, total=len(tasks), desc=desc, disable=not show):
                results.append(result)
                timings.append(seconds)
    logger.debug("%s: %d tasks on %d workers", desc, len(tasks), workers)
    return results, timings
