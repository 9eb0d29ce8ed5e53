"""
通用重试工具
用于随机采样的重抽（例如 G ~ P 抽到 Z = 0 时重抽），不做退避等待。
"""

from typing import Callable, Optional, Tuple, Type, TypeVar

T = TypeVar("T")


def retry_call(
    func: Callable[[int], T],
    *,
    max_attempts: int = 3,
    retry_exceptions: Tuple[Type[BaseException], ...] = (Exception,),
    on_retry: Optional[Callable[[int, BaseException], None]] = None,
) -> T:
    """
    同步重试包装器。

    Args:
        func: 接收尝试序号（从 0 开始）的函数；每次尝试应使用不同的随机流
        max_attempts: 最大尝试次数
        retry_exceptions: 触发重试的异常类型
        on_retry: 每次重试前的回调 (attempt, error)

    Returns:
        第一次成功调用的返回值；全部失败时抛出最后一次的异常
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")

    attempt = 0
    while True:
        try:
            return func(attempt)
        except retry_exceptions as err:
            attempt += 1
            if attempt >= max_attempts:
                raise
            if on_retry:
                try:
                    on_retry(attempt, err)
                except Exception:
                    pass
