"""
稠密环统计 C_k、平移环统计 C̄_k 与修正项 Y_{M1}

C_k = (nm)^{−k/2} Σ_{i 互异, j 互异} Π_ℓ G[j_ℓ, i_ℓ]·G[j_ℓ, i_{ℓ+1}]，i_{k+1} ≡ i_1。
G 取 m×n（行 = 约束），所以 G[j, i] 是第 j 行第 i 列。

两条计算路径：
  - bruteforce：逐个 i 元组的字面求和（对 j 元组向量化），作为参照；
  - fast：对 i、j 的重合划分做 Möbius 容斥，每一项是 ±1 张量网络，用 einsum 精确收缩。
分子始终是精确整数，最后一次性除以 (nm)^{k/2}。
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CapabilityError, DomainError
from .model import ConstraintMatrix
from .settings import get_settings

logger = logging.getLogger(__name__)

# 字面求和的规模上限：(max(n, m) 上限, k 上限)
BRUTEFORCE_BUDGET: Tuple[Tuple[int, int], ...] = ((10, 5), (40, 3))

_FLOAT_EXACT = 1 << 53
_INT64_EXACT = 1 << 63


# ─────────────────────────── 数据类 ─────────────────────────────────


@dataclass(frozen=True)
class CycleStats:
    n: int
    m: int
    method: str
    values: Dict[int, float]
    numerators: Dict[int, int] = field(default_factory=dict, repr=False)

    def c(self, k: int) -> float:
        if k not in self.values:
            raise CapabilityError(f"C_{k} was not computed")
        return self.values[k]

    @property
    def ks(self) -> List[int]:
        return sorted(self.values)

    def to_columns(self) -> Dict[str, float]:
        return {f"c{k}": self.values[k] for k in self.ks}


@dataclass(frozen=True)
class CorrectionTerm:
    y: float
    m1: int
    beta_used: float
    beta_convention: str = "beta_n"
    stats: Optional[CycleStats] = field(default=None, repr=False)


@dataclass(frozen=True)
class PlantInfo:
    """平移统计的种植信息：kind = single | pair；pair 时 Q = 前 q_block 列（规范化后）"""
    kind: str
    beta_n: float
    q_block: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("single", "pair"):
            raise DomainError(f"plant kind must be 'single' or 'pair', got {self.kind!r}")
        if self.kind == "pair" and self.q_block is None:
            raise DomainError("pair planting needs q_block")


# ─────────────────────────── 公共工具 ───────────────────────────────


def _check_k(k: int) -> int:
    k = int(k)
    if k < 2:
        raise DomainError(f"cycle length must be >= 2, got {k}")
    return k


def normalize_cycle_sum(numerator: int, n: int, m: int, k: int) -> float:
    """整数分子 / (nm)^{k/2}"""
    if n * m == 0:
        return 0.0
    return float(numerator / math.sqrt(n * m) ** k)


def _check_bruteforce_budget(n: int, m: int, k: int) -> None:
    size = max(n, m)
    if not any(size <= s_max and k <= k_max for s_max, k_max in BRUTEFORCE_BUDGET):
        raise CapabilityError(
            f"bruteforce C_{k} at n={n}, m={m} exceeds the budget "
            f"(k <= 3 for n, m <= 40; k <= 5 for n, m <= 10)"
        )


def _j_tuples(m: int, k: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(m), k)), dtype=np.int64).reshape(-1, k)


# ─────────────────────────── 字面求和 ───────────────────────────────


def cycle_sum_bruteforce(G: ConstraintMatrix, k: int) -> int:
    """定义式的整数分子：外层循环 i 元组，内层对全部 j 元组向量化"""
    k = _check_k(k)
    n, m = G.n, G.m
    _check_bruteforce_budget(n, m, k)
    if k > n or k > m:
        return 0
    g = G.signs()
    jt = _j_tuples(m, k)
    total = 0
    for it in itertools.permutations(range(n), k):
        # edge[ℓ][j] = G[j, i_ℓ]·G[j, i_{ℓ+1}]
        edge = [g[:, it[l]] * g[:, it[(l + 1) % k]] for l in range(k)]
        prod = np.ones(len(jt), dtype=np.int64)
        for l in range(k):
            prod *= edge[l][jt[:, l]]
        total += int(prod.sum())
    return total


def cycle_stat_bruteforce(G: ConstraintMatrix, k: int) -> float:
    return normalize_cycle_sum(cycle_sum_bruteforce(G, k), G.n, G.m, k)


def cycle_stat_shifted(G: ConstraintMatrix, k: int, plant_info: PlantInfo) -> float:
    """
    C̄_k：每条边减去 2β_n/√(mn)（单种植），或 4β_n·1[i_ℓ, i_{ℓ+1} ∈ Q]/√(mn)（双种植）。
    G 应已规范化（种植解为全 1，双种植时一致列在前）。
    """
    k = _check_k(k)
    n, m = G.n, G.m
    _check_bruteforce_budget(n, m, k)
    if k > n or k > m:
        return 0.0
    g = G.signs().astype(float)
    scale = 1.0 / math.sqrt(m * n)
    if plant_info.kind == "single":
        def shift(a: int, b: int) -> float:
            return 2.0 * plant_info.beta_n * scale
    else:
        q = plant_info.q_block

        def shift(a: int, b: int) -> float:
            return 4.0 * plant_info.beta_n * scale if (a < q and b < q) else 0.0

    jt = _j_tuples(m, k)
    acc = []
    for it in itertools.permutations(range(n), k):
        prod = np.ones(len(jt))
        for l in range(k):
            a, b = it[l], it[(l + 1) % k]
            prod *= (g[:, a] * g[:, b] - shift(a, b))[jt[:, l]]
        acc.append(prod.sum())
    return math.fsum(acc) * scale ** k


# ─────────────────────────── 容斥快速路径 ─────────────────────────────


def _set_partitions(k: int) -> List[Tuple[int, ...]]:
    """k 个位置的全部集合划分，以受限增长串表示"""
    out: List[Tuple[int, ...]] = []

    def grow(prefix: List[int], top: int) -> None:
        if len(prefix) == k:
            out.append(tuple(prefix))
            return
        for b in range(top + 2):
            grow(prefix + [b], max(top, b))

    grow([0], 0)
    return out


def _mobius(labels: Sequence[int]) -> int:
    """μ(0̂, π) = Π_B (−1)^{|B|−1}(|B|−1)!"""
    value = 1
    for b in set(labels):
        size = labels.count(b)
        value *= (-1) ** (size - 1) * math.factorial(size - 1)
    return value


@lru_cache(maxsize=None)
def _networks(k: int) -> Tuple[Tuple[int, str, int, int], ...]:
    """
    k 阶容斥展开：每项 (系数, einsum 下标, 孤立 i 节点数, 孤立 j 节点数)。
    偶数重边因 G² = 1 消去；无边的项下标为空串。
    """
    merged: Dict[Tuple, int] = {}
    for pi in _set_partitions(k):
        mu_pi = _mobius(pi)
        for sigma in _set_partitions(k):
            coef = mu_pi * _mobius(sigma)
            parity: Dict[Tuple[int, int], int] = {}
            for l in range(k):
                for i_block in (pi[l], pi[(l + 1) % k]):
                    e = (sigma[l], i_block)
                    parity[e] = parity.get(e, 0) ^ 1
            edges = tuple(sorted(e for e, odd in parity.items() if odd))
            used_i = {e[1] for e in edges}
            used_j = {e[0] for e in edges}
            key = (edges, len(set(pi)) - len(used_i), len(set(sigma)) - len(used_j))
            merged[key] = merged.get(key, 0) + coef

    terms = []
    for (edges, iso_i, iso_j), coef in sorted(merged.items()):
        if coef == 0:
            continue
        subs = ",".join(f"{chr(ord('A') + j)}{chr(ord('a') + i)}" for j, i in edges)
        terms.append((coef, subs + "->" if subs else "", iso_i, iso_j))
    return tuple(terms)


_PATH_CACHE: Dict[Tuple[str, int, int], list] = {}


def _contract(subs: str, g: np.ndarray) -> int:
    operands = [g] * (subs.count(",") + 1)
    key = (subs, g.shape[0], g.shape[1])
    path = _PATH_CACHE.get(key)
    if path is None:
        path = np.einsum_path(subs, *operands, optimize="greedy")[0]
        _PATH_CACHE[key] = path
    value = np.einsum(subs, *operands, optimize=path)
    return int(round(float(value))) if g.dtype.kind == "f" else int(value)


def cycle_sum_fast(G: ConstraintMatrix, k: int) -> int:
    """容斥 + 张量收缩得到与字面求和相同的整数分子"""
    k = _check_k(k)
    k_fast = get_settings().cycles.k_fast
    if k > k_fast:
        raise CapabilityError(f"fast C_k supports k <= {k_fast}, got k={k}")
    n, m = G.n, G.m
    bound = (n * m) ** k
    if bound < _FLOAT_EXACT:
        dtype = np.float64
    elif bound < _INT64_EXACT:
        dtype = np.int64
    else:
        raise CapabilityError(f"(nm)^k = {bound} exceeds exact int64 range for k={k}")
    g = G.signs().astype(dtype)

    total = 0
    for coef, subs, iso_i, iso_j in _networks(k):
        scalar = n ** iso_i * m ** iso_j
        total += coef * scalar * (_contract(subs, g) if subs else 1)
    return total


def cycle_stat_fast(G: ConstraintMatrix, k: int) -> float:
    return normalize_cycle_sum(cycle_sum_fast(G, k), G.n, G.m, k)


# ─────────────────────────── 汇总与 Y ───────────────────────────────


def cycle_stats(G: ConstraintMatrix, m1: int, method: str = "auto") -> CycleStats:
    """
    C_2..C_{M1}。method=auto 时 k ≤ K_FAST 走快速路径，其余尝试字面求和；
    都不可用时抛 CapabilityError 并列出缺失的 k。
    """
    if m1 < 2:
        raise DomainError(f"M1 must be >= 2, got {m1}")
    if method not in ("auto", "fast", "bruteforce"):
        raise DomainError(f"unknown cycle method {method!r}")
    k_fast = get_settings().cycles.k_fast

    numerators: Dict[int, int] = {}
    used = set()
    missing = []
    for k in range(2, m1 + 1):
        try:
            if method == "fast" or (method == "auto" and k <= k_fast):
                numerators[k] = cycle_sum_fast(G, k)
                used.add("fast")
            else:
                numerators[k] = cycle_sum_bruteforce(G, k)
                used.add("bruteforce")
        except CapabilityError:
            missing.append(k)
    if missing:
        raise CapabilityError(f"C_k unavailable for k in {missing} at n={G.n}, m={G.m}")

    label = used.pop() if len(used) == 1 else "mixed"
    values = {k: normalize_cycle_sum(v, G.n, G.m, k) for k, v in numerators.items()}
    return CycleStats(n=G.n, m=G.m, method=label, values=values, numerators=numerators)


def correction_from_stats(
    stats: CycleStats,
    beta_value: float,
    m1: Optional[int] = None,
    convention: str = "beta_n",
) -> CorrectionTerm:
    """Y_{M1} = Σ_{k=2}^{M1} [2(2β)^k C_k − (2β)^{2k}] / (4k)"""
    m1 = m1 if m1 is not None else max(stats.ks)
    if m1 < 2:
        raise DomainError(f"M1 must be >= 2, got {m1}")
    missing = [k for k in range(2, m1 + 1) if k not in stats.values]
    if missing:
        raise CapabilityError(f"missing C_k for k in {missing}")
    b2 = 2.0 * beta_value
    y = math.fsum((2.0 * b2 ** k * stats.values[k] - b2 ** (2 * k)) / (4.0 * k)
                  for k in range(2, m1 + 1))
    return CorrectionTerm(y=y, m1=m1, beta_used=beta_value, beta_convention=convention, stats=stats)


def correction_Y(
    G: ConstraintMatrix,
    m1: int,
    beta_value: float,
    *,
    convention: str = "beta_n",
    method: str = "auto",
) -> CorrectionTerm:
    """计算 C_2..C_{M1} 后组装 Y_{M1}；convention 记录 β 的取法（beta_n 或 beta）"""
    stats = cycle_stats(G, m1, method=method)
    term = correction_from_stats(stats, beta_value, m1, convention)
    logger.debug("Y_%d = %.6g (beta=%.6g, %s)", m1, term.y, beta_value, convention)
    return term
