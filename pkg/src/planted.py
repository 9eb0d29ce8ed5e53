"""
种植模型采样器

P*    ：X 均匀，G 的每一行独立拒绝采样直到 |⟨G_j, X⟩| ≤ κ√n
P*²_t ：X1 均匀，X2 在固定重叠 ⟨X1,X2⟩ = t√n 上均匀，行拒绝直到两个约束同时满足
以及 E*[G_{j,p} G_{j,q}] 的一阶诊断（全 1 规范下）。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, SamplingError
from .model import (
    ConstraintMatrix,
    ModelParams,
    SpinVector,
    agreements_from_t,
    pair_row_log_prob,
    satisfies,
    t_from_agreements,
)
from .seeding import make_rng
from .settings import get_settings
from .theory import discrete_constants

logger = logging.getLogger(__name__)

# 单批候选行的元素上限
_BATCH_ENTRIES = 4_000_000


# ─────────────────────────── 数据类 ─────────────────────────────────


@dataclass(frozen=True, eq=False)
class PlantedInstance:
    planted: SpinVector
    matrix: ConstraintMatrix
    rejections: np.ndarray = field(repr=False)

    @property
    def acceptance_rate(self) -> float:
        return self.matrix.m / (self.matrix.m + float(self.rejections.sum()))

    def gauged(self) -> "PlantedInstance":
        """列 i 乘以 X_i：种植解变为全 1 向量"""
        return PlantedInstance(
            planted=SpinVector.ones(self.planted.n),
            matrix=self.matrix.gauge(self.planted),
            rejections=self.rejections,
        )

    def to_fixture_text(self, kappa) -> str:
        return self.matrix.to_fixture_text(kappa) + f"X {self.planted.to_text()}\n"

    @classmethod
    def from_fixture_text(cls, text: str) -> Tuple["PlantedInstance", str]:
        matrix, kappa = ConstraintMatrix.from_fixture_text(text)
        x_lines = [ln for ln in text.splitlines() if ln.startswith("X ")]
        if len(x_lines) != 1:
            raise DomainError("planted fixture needs exactly one 'X' line")
        signs = [1 if ch == "+" else -1 for ch in x_lines[0][2:].strip()]
        return cls(planted=SpinVector.from_signs(signs), matrix=matrix,
                   rejections=np.zeros(matrix.m, dtype=np.int64)), kappa


@dataclass(frozen=True, eq=False)
class PairPlantedInstance:
    x1: SpinVector
    x2: SpinVector
    t: float
    agreements: int
    matrix: ConstraintMatrix
    rejections: np.ndarray = field(repr=False)

    @property
    def acceptance_rate(self) -> float:
        return self.matrix.m / (self.matrix.m + float(self.rejections.sum()))

    def gauged(self) -> "PairPlantedInstance":
        """
        x1 → 全 1；列重排使一致集合排在前面，x2 → 前 a 个为 +1、其余为 −1 的块向量。
        q_block = a 即 Q 块的边界。
        """
        n = self.x1.n
        g = self.matrix.gauge(self.x1)
        rel = self.x2.signs() * self.x1.signs()
        perm = list(np.flatnonzero(rel > 0)) + list(np.flatnonzero(rel < 0))
        block = np.where(np.arange(n) < self.agreements, 1, -1)
        return PairPlantedInstance(
            x1=SpinVector.ones(n),
            x2=SpinVector.from_signs(block),
            t=self.t,
            agreements=self.agreements,
            matrix=g.permute_columns(perm),
            rejections=self.rejections,
        )

    @property
    def q_block(self) -> int:
        return self.agreements


@dataclass(frozen=True)
class CorrelationEstimate:
    order: int
    mean: float
    se: float
    count: int
    target: float
    # 领头项 2β_n/√(mn)（order 3 时为 0）
    leading: float = 0.0

    @property
    def z_score(self) -> float:
        return self._z(self.target)

    @property
    def z_leading(self) -> float:
        """对领头项的 z 值；与 z_score 的差反映 O(n⁻²) 修正"""
        return self._z(self.leading)

    def _z(self, value: float) -> float:
        if self.se == 0:
            return 0.0 if self.mean == value else math.inf
        return (self.mean - value) / self.se


# ─────────────────────────── 拒绝采样 ───────────────────────────────


def _rejection_rows(
    rng: np.random.Generator,
    n: int,
    m: int,
    accept: Callable[[np.ndarray], np.ndarray],
    p_hint: float,
    budget: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    逐行拒绝采样：候选行按批生成、按顺序分配给第 j 行。
    返回 (m×n 的 ±1 行, 每行被拒绝次数)。
    """
    rows = np.empty((m, n), dtype=np.int64)
    rejections = np.zeros(m, dtype=np.int64)
    max_batch = max(1, _BATCH_ENTRIES // max(n, 1))
    batch = min(max_batch, max(64, int(math.ceil(1.2 * m / max(p_hint, 1e-6)))))
    j = 0
    streak = 0
    while j < m:
        cand = rng.integers(0, 2, size=(batch, n), dtype=np.int64) * 2 - 1
        ok = accept(cand)
        prev = -1
        for idx in np.flatnonzero(ok):
            streak += int(idx) - prev - 1
            if streak > budget:
                break
            rows[j] = cand[idx]
            rejections[j] = streak
            streak = 0
            j += 1
            prev = int(idx)
            if j == m:
                break
        else:
            streak += batch - 1 - prev
        if streak > budget:
            raise SamplingError(f"row {j}: rejection budget {budget} exceeded")
    return rows, rejections


def _random_spins(rng: np.random.Generator, n: int) -> SpinVector:
    return SpinVector.from_bits(rng.integers(0, 2, size=n, dtype=np.uint8))


def sample_planted(params: ModelParams, rng: np.random.Generator) -> PlantedInstance:
    """(X, G) ~ P*：X 均匀，G 的行在 |⟨G_j, X⟩| ≤ κ√n 条件下独立"""
    n, m, band = params.n, params.m, params.band
    x = _random_spins(rng, n)
    xs = x.signs()
    p_hint = discrete_constants(params.kappa, n, max(m, 1)).p_kappa_n
    budget = get_settings().planted.rejection_budget
    rows, rej = _rejection_rows(rng, n, m, lambda c: np.abs(c @ xs) <= band, p_hint, budget)
    G = ConstraintMatrix.from_signs(rows.reshape(m, n))
    if not satisfies(G, x, params.kappa):
        raise SamplingError("planted vector does not satisfy its own matrix")
    return PlantedInstance(planted=x, matrix=G, rejections=rej)


def sample_planted_pair(params: ModelParams, t: float, rng: np.random.Generator) -> PairPlantedInstance:
    """G ~ P*²_t：一致集合在大小为 n/2 + t√n/2 的子集中均匀选取"""
    n, m, band = params.n, params.m, params.band
    a = agreements_from_t(n, t)
    x1 = _random_spins(rng, n)
    agree = np.zeros(n, dtype=bool)
    agree[rng.choice(n, size=a, replace=False)] = True
    s1 = x1.signs()
    s2 = np.where(agree, s1, -s1)
    x2 = SpinVector.from_signs(s2)
    if x1.inner(x2) != 2 * a - n:
        raise SamplingError("pair overlap construction failed")

    p_hint = math.exp(pair_row_log_prob(n, band, a))
    if p_hint == 0.0:
        raise DomainError(f"overlap t={t} admits no row satisfying both constraints")
    budget = get_settings().planted.rejection_budget

    def accept(cand: np.ndarray) -> np.ndarray:
        return (np.abs(cand @ s1) <= band) & (np.abs(cand @ s2) <= band)

    rows, rej = _rejection_rows(rng, n, m, accept, p_hint, budget)
    G = ConstraintMatrix.from_signs(rows.reshape(m, n))
    return PairPlantedInstance(x1=x1, x2=x2, t=t_from_agreements(n, a), agreements=a,
                               matrix=G, rejections=rej)


def feasible_overlaps(n: int) -> List[float]:
    """所有可行的 t（n/2 + t√n/2 ∈ {0..n}）"""
    return [t_from_agreements(n, a) for a in range(n + 1)]


# ─────────────────────────── 行相关诊断 ─────────────────────────────


def planted_row_target(params: ModelParams) -> float:
    """E*[G_{j,p} G_{j,q}] 的领头项 2β_n/√(mn)"""
    if params.m == 0:
        raise DomainError("planted row target needs m >= 1")
    dc = discrete_constants(params.kappa, params.n, params.m)
    return 2.0 * dc.beta_n / math.sqrt(params.m * params.n)


def planted_row_exact(params: ModelParams) -> float:
    """
    有限 n 的精确值 (μ_{2,κ,n} − 1)/(n − 1)，即 E[(S² − n)/(n(n−1))]。
    与领头项相差 O(n⁻²)，大样本下这一差距会超过标准误。
    """
    n = params.n
    if n < 2:
        raise DomainError("planted row correlation needs n >= 2")
    dc = discrete_constants(params.kappa, n, max(params.m, 1))
    return (dc.mu2_kappa_n - 1.0) / (n - 1)


def _conditioned_row_sums(rng: np.random.Generator, n: int, band: int, count: int) -> np.ndarray:
    """全 1 规范下种植行的行和：Binomial 抽样后按带宽拒绝，分布与逐元素生成相同"""
    out = np.empty(0, dtype=np.int64)
    while out.size < count:
        s = 2 * rng.binomial(n, 0.5, size=max(1024, 2 * (count - out.size))) - n
        out = np.concatenate([out, s[np.abs(s) <= band]])
    return out[:count]


def _pair_average(s: np.ndarray, n: int, order: int) -> np.ndarray:
    s = s.astype(float)
    if order == 2:
        return (s * s - n) / (n * (n - 1))
    return (s ** 3 - 3.0 * n * s + 2.0 * s) / (n * (n - 1) * (n - 2))


def planted_row_correlation(
    params: ModelParams,
    rng: Optional[np.random.Generator] = None,
    rows: int = 100_000,
    *,
    order: int = 2,
    columns: Optional[Sequence[int]] = None,
    samples: Optional[Sequence[PlantedInstance]] = None,
) -> CorrelationEstimate:
    """
    种植行（全 1 规范）上 order 阶乘积的蒙特卡洛均值与标准误。

    columns 给定时取固定列的乘积；否则取每行所有不同列组合的平均（只依赖行和，方差更小）。
    samples 给定时使用已有实例（先规范化），否则直接生成 rows 行。
    """
    if order not in (2, 3):
        raise DomainError(f"order must be 2 or 3, got {order}")
    n = params.n
    if n < order:
        raise DomainError(f"need n >= {order} for an order-{order} product")
    if columns is not None and (len(columns) != order or len(set(columns)) != order):
        raise DomainError(f"columns must be {order} distinct indices")

    if samples is not None:
        mats = np.concatenate([inst.gauged().matrix.signs() for inst in samples], axis=0)
        values = (np.prod(mats[:, list(columns)], axis=1).astype(float) if columns is not None
                  else _pair_average(mats.sum(axis=1), n, order))
    elif columns is None:
        rng = rng if rng is not None else make_rng(params.seed)
        values = _pair_average(_conditioned_row_sums(rng, n, params.band, rows), n, order)
    else:
        rng = rng if rng is not None else make_rng(params.seed)
        ones = np.ones(n, dtype=np.int64)
        budget = get_settings().planted.rejection_budget
        p_hint = discrete_constants(params.kappa, n, 1).p_kappa_n
        chunks = []
        remaining = rows
        per_chunk = max(1, _BATCH_ENTRIES // n)
        while remaining > 0:
            take = min(remaining, per_chunk)
            mat, _ = _rejection_rows(rng, n, take, lambda c: np.abs(c @ ones) <= params.band, p_hint, budget)
            chunks.append(np.prod(mat[:, list(columns)], axis=1).astype(float))
            remaining -= take
        values = np.concatenate(chunks)

    count = int(values.size)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(count)) if count > 1 else math.inf
    if order == 2:
        target, leading = planted_row_exact(params), planted_row_target(params)
    else:
        target = leading = 0.0
    return CorrelationEstimate(order=order, mean=mean, se=se, count=count, target=target, leading=leading)
