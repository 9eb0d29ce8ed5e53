"""
精确解计数（Gray 码枚举）

高位 n−L 个自旋按反射 Gray 码行走：每步只翻转一个自旋，m 个行和整体 ±2·列。
低位 L 个自旋作为一个向量化块：预先算好 2^L 种低位组合的部分和表，
每个高位状态一次性判定整块。高位区间可以切片并行，每片从起点重新推导行和。
"""

import itertools
import logging
import math
from multiprocessing import Pool
from typing import List, Optional, Tuple

import numpy as np

from .errors import CapabilityError, PreconditionError
from .model import ConstraintMatrix, SolutionSet, SpinVector, row_sums, satisfies
from .settings import get_settings
from .theory import KappaLike, integer_band

logger = logging.getLogger(__name__)


def _gray(i: int) -> int:
    return i ^ (i >> 1)


def _low_table(signs: np.ndarray, low_bits: int) -> np.ndarray:
    """(m, 2^L) 低位部分和表；第 p 列对应低位模式 p（bit i 置位 = +1）"""
    patterns = np.arange(1 << low_bits, dtype=np.int64)
    low_signs = ((patterns[:, None] >> np.arange(low_bits)) & 1) * 2 - 1
    return (signs[:, :low_bits] @ low_signs.T).astype(np.int32)


def _high_sums(signs: np.ndarray, low_bits: int, high_state: int) -> np.ndarray:
    high_width = signs.shape[1] - low_bits
    spins = ((high_state >> np.arange(high_width)) & 1) * 2 - 1
    return (signs[:, low_bits:] @ spins).astype(np.int32)


class _BlockScan:
    """对 Gray 序高位区间 [start, stop) 的扫描器；逐个产出 (高位状态, 满足的低位掩码)"""

    def __init__(self, signs: np.ndarray, band: int, low_bits: int):
        self.signs = signs
        self.band = band
        self.low_bits = low_bits
        self.low = _low_table(signs, low_bits)
        self.cols2 = (2 * signs[:, low_bits:]).astype(np.int32)

    def walk(self, start: int, stop: int):
        state = _gray(start)
        high = _high_sums(self.signs, self.low_bits, state)
        for i in range(start, stop):
            if i > start:
                nxt = _gray(i)
                bit = (nxt ^ state).bit_length() - 1
                if (nxt >> bit) & 1:
                    high += self.cols2[:, bit]
                else:
                    high -= self.cols2[:, bit]
                state = nxt
            ok = np.all(np.abs(self.low + high[:, None]) <= self.band, axis=0)
            yield state, ok


def _scan_range(args) -> Tuple[int, Optional[List[int]]]:
    signs, band, low_bits, start, stop, collect, list_cap = args
    scanner = _BlockScan(signs, band, low_bits)
    total = 0
    found: Optional[List[int]] = [] if collect else None
    for state, ok in scanner.walk(start, stop):
        c = int(np.count_nonzero(ok))
        if c == 0:
            continue
        total += c
        if found is not None:
            if len(found) + c > list_cap:
                found = None
            else:
                base = state << low_bits
                found.extend(base | int(p) for p in np.flatnonzero(ok))
    return total, found


def _layout(n: int, block_bits: int) -> Tuple[int, int]:
    low_bits = min(block_bits, n)
    return low_bits, n - low_bits


def _check_capacity(n: int) -> None:
    n_max = get_settings().enumeration.n_max
    if n > n_max:
        raise CapabilityError(f"exact counting supports n <= {n_max}, got n={n}")


def count_solutions(
    G: ConstraintMatrix,
    kappa: KappaLike,
    *,
    collect: bool = False,
    workers: int = 1,
    prefix_bits: Optional[int] = None,
) -> SolutionSet:
    """
    精确计算 Z = |S(G)|。

    collect=True 且 n ≤ list_max_n、Z ≤ list_max_count 时保留全部解（升序自旋整数）。
    workers > 1 时按高位前缀切成 2^p 片并行；结果与 worker 数无关。
    """
    cfg = get_settings().enumeration
    n = G.n
    _check_capacity(n)
    band = integer_band(kappa, n)
    low_bits, high_bits = _layout(n, cfg.block_bits)
    collect = collect and n <= cfg.list_max_n
    signs = np.asarray(G.signs())

    if prefix_bits is None:
        prefix_bits = 0 if workers <= 1 else min(high_bits, max(1, math.ceil(math.log2(workers)) + 2))
    prefix_bits = min(prefix_bits, high_bits)
    span = 1 << high_bits
    parts = 1 << prefix_bits
    chunk = span // parts
    tasks = [(signs, band, low_bits, p * chunk, (p + 1) * chunk, collect, cfg.list_max_count)
             for p in range(parts)]

    if workers > 1 and parts > 1:
        with Pool(processes=workers) as pool:
            results = pool.map(_scan_range, tasks)
    else:
        results = [_scan_range(t) for t in tasks]

    total = sum(r[0] for r in results)
    solution_ints = None
    if collect and all(r[1] is not None for r in results) and total <= cfg.list_max_count:
        solution_ints = tuple(sorted(v for r in results for v in r[1]))
    logger.debug("count_solutions n=%d m=%d band=%d -> Z=%d", n, G.m, band, total)
    return SolutionSet(count=total, n=n, solution_ints=solution_ints)


def naive_count(G: ConstraintMatrix, kappa: KappaLike) -> int:
    """逐个 X 检查的参考实现（仅用于交叉验证，n 很小时使用）"""
    band = integer_band(kappa, G.n)
    rows = [G.row_int(j) for j in range(G.m)]
    n = G.n
    total = 0
    for x in range(1 << n):
        if all(abs(n - 2 * (r ^ x).bit_count()) <= band for r in rows):
            total += 1
    return total


def sample_uniform_solution(
    G: ConstraintMatrix,
    kappa: KappaLike,
    rng: np.random.Generator,
) -> Tuple[Optional[SpinVector], int]:
    """
    从 S(G) 中精确均匀抽取一个解（对扫描块做加权蓄水池抽样，不存全部解）。
    返回 (解或 None, Z)。
    """
    cfg = get_settings().enumeration
    _check_capacity(G.n)
    band = integer_band(kappa, G.n)
    low_bits, high_bits = _layout(G.n, cfg.block_bits)
    scanner = _BlockScan(np.asarray(G.signs()), band, low_bits)

    total = 0
    chosen: Optional[int] = None
    for state, ok in scanner.walk(0, 1 << high_bits):
        c = int(np.count_nonzero(ok))
        if c == 0:
            continue
        total += c
        if rng.random() * total < c:
            pick = int(np.flatnonzero(ok)[rng.integers(c)])
            chosen = (state << low_bits) | pick
    if chosen is None:
        return None, 0
    return SpinVector.from_int(chosen, G.n), total


def nearest_other_solution(
    G: ConstraintMatrix,
    X: SpinVector,
    kappa: KappaLike,
    radius: int,
    *,
    budget: Optional[int] = None,
    chunk: int = 20000,
) -> Optional[int]:
    """
    X 之外、Hamming 距离 ≤ radius 的最近解的距离；半径内无解时返回 None。
    按翻转集合大小 r = 1, 2, ... 逐层枚举（半径内精确）。
    """
    if not satisfies(G, X, kappa):
        raise PreconditionError("X is not a solution of G")
    radius = min(int(radius), G.n)
    if radius <= 0:
        return None
    budget = budget if budget is not None else get_settings().harness.flip_search_budget
    needed = sum(math.comb(G.n, r) for r in range(1, radius + 1))
    if needed > budget:
        raise CapabilityError(f"flip search within radius {radius} needs {needed} candidates (budget {budget})")

    band = integer_band(kappa, G.n)
    s0 = row_sums(G, X)
    # 翻转第 i 个自旋使行和变化 −2·G_{j,i}X_i
    delta = -2 * (np.asarray(G.signs()) * X.signs()[None, :])
    for r in range(1, radius + 1):
        combos = itertools.combinations(range(G.n), r)
        while True:
            block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
            if block.size == 0:
                break
            sums = s0[:, None] + delta[:, block].sum(axis=2)
            if np.any(np.all(np.abs(sums) <= band, axis=0)):
                return r
    return None
