"""
SBP 模型：约束矩阵、自旋向量、约束判定，以及一、二阶矩的精确闭式

约定：
- G 是 m×n 的 ±1 矩阵，行 = 约束，列 = 变量；按行 bit 打包（小端，bit i 置位 = +1）
- 行 j 满足约束 ⇔ |⟨G_j, X⟩| ≤ κ√n，用整数带宽 b = isqrt(⌊κ²n⌋) 精确比较
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .errors import DomainError, PreconditionError
from .seeding import check_seed, make_rng
from .theory import KappaLike, discrete_constants, exact_kappa, integer_band, log_binomial

logger = logging.getLogger(__name__)

_LOG2 = math.log(2.0)

MATRIX_FIXTURE_MAGIC = "SBP"
MATRIX_FIXTURE_VERSION = "v1"


# ─────────────────────────── 参数 ─────────────────────────────────


@dataclass(frozen=True)
class ModelParams:
    """(κ, n, m, seed)；κ 保存为十进制字符串，保证带宽比较精确"""
    kappa: str
    n: int
    m: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kappa", str(self.kappa).strip())
        exact_kappa(self.kappa)
        if self.n < 1:
            raise DomainError(f"n must be >= 1, got {self.n}")
        if self.m < 0:
            raise DomainError(f"m must be >= 0, got {self.m}")
        check_seed(self.seed)

    @classmethod
    def from_alpha(cls, kappa: KappaLike, alpha: Union[float, str], n: int, seed: int = 0) -> "ModelParams":
        """m = ⌊αn⌋，α 按十进制字面量精确取整"""
        frac = Fraction(str(alpha))
        if frac < 0:
            raise DomainError(f"alpha must be >= 0, got {alpha}")
        return cls(kappa=str(kappa), n=n, m=math.floor(frac * n), seed=seed)

    @property
    def kappa_value(self) -> float:
        return float(exact_kappa(self.kappa))

    @property
    def band(self) -> int:
        return integer_band(self.kappa, self.n)

    @property
    def alpha(self) -> float:
        return self.m / self.n

    def with_m(self, m: int) -> "ModelParams":
        return ModelParams(kappa=self.kappa, n=self.n, m=m, seed=self.seed)


# ─────────────────────────── bit 打包类型 ──────────────────────────


def _pack_rows(bits: np.ndarray) -> np.ndarray:
    packed = np.packbits(bits.astype(np.uint8), axis=-1, bitorder="little")
    packed.setflags(write=False)
    return packed


def _unpack_rows(packed: np.ndarray, n: int) -> np.ndarray:
    return np.unpackbits(packed, axis=-1, count=n, bitorder="little")


def _parse_sign_line(line: str, n: int) -> List[int]:
    line = line.strip()
    if len(line) != n:
        raise DomainError(f"expected {n} sign characters, got {len(line)}")
    out = []
    for ch in line:
        if ch == "+":
            out.append(1)
        elif ch in "-−":
            out.append(0)
        else:
            raise DomainError(f"invalid sign character {ch!r}")
    return out


@dataclass(frozen=True, eq=False)
class SpinVector:
    """X ∈ {−1,+1}^n，bit i 置位表示 X_i = +1"""
    n: int
    packed: np.ndarray

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "SpinVector":
        arr = np.asarray(bits, dtype=np.uint8)
        return cls(n=int(arr.shape[0]), packed=_pack_rows(arr))

    @classmethod
    def from_signs(cls, signs: Sequence[int]) -> "SpinVector":
        arr = np.asarray(signs)
        if not np.all(np.abs(arr) == 1):
            raise DomainError("spin entries must be +1 or -1")
        return cls.from_bits((arr > 0).astype(np.uint8))

    @classmethod
    def from_int(cls, value: int, n: int) -> "SpinVector":
        bits = [(value >> i) & 1 for i in range(n)]
        return cls.from_bits(bits)

    @classmethod
    def ones(cls, n: int) -> "SpinVector":
        return cls.from_bits(np.ones(n, dtype=np.uint8))

    @cached_property
    def bits(self) -> np.ndarray:
        return _unpack_rows(self.packed, self.n)

    def signs(self) -> np.ndarray:
        return self.bits.astype(np.int64) * 2 - 1

    def to_int(self) -> int:
        return int.from_bytes(self.packed.tobytes(), "little")

    def hamming(self, other: "SpinVector") -> int:
        return (self.to_int() ^ other.to_int()).bit_count()

    def inner(self, other: "SpinVector") -> int:
        return self.n - 2 * self.hamming(other)

    def to_text(self) -> str:
        return "".join("+" if b else "-" for b in self.bits)

    def __eq__(self, other) -> bool:
        return isinstance(other, SpinVector) and self.n == other.n and np.array_equal(self.packed, other.packed)

    def __hash__(self) -> int:
        return hash((self.n, self.packed.tobytes()))


@dataclass(frozen=True, eq=False)
class ConstraintMatrix:
    """m×n 的 ±1 矩阵，每行 bit 打包；构造后不可变，可跨 worker 共享"""
    n: int
    m: int
    packed: np.ndarray

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "ConstraintMatrix":
        arr = np.asarray(bits, dtype=np.uint8)
        if arr.ndim != 2:
            raise DomainError("constraint matrix must be two-dimensional")
        return cls(n=int(arr.shape[1]), m=int(arr.shape[0]), packed=_pack_rows(arr))

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> "ConstraintMatrix":
        arr = np.asarray(signs)
        if not np.all(np.abs(arr) == 1):
            raise DomainError("matrix entries must be +1 or -1")
        return cls.from_bits((arr > 0).astype(np.uint8))

    @cached_property
    def _signs(self) -> np.ndarray:
        s = _unpack_rows(self.packed, self.n).astype(np.int64) * 2 - 1
        s.setflags(write=False)
        return s

    def signs(self) -> np.ndarray:
        """只读的 int64 ±1 稠密矩阵"""
        return self._signs

    def row_int(self, j: int) -> int:
        return int.from_bytes(self.packed[j].tobytes(), "little")

    def entry(self, j: int, i: int) -> int:
        return int(self._signs[j, i])

    def negate_column(self, i: int) -> "ConstraintMatrix":
        s = self._signs.copy()
        s[:, i] *= -1
        return ConstraintMatrix.from_signs(s)

    def negate_row(self, j: int) -> "ConstraintMatrix":
        s = self._signs.copy()
        s[j, :] *= -1
        return ConstraintMatrix.from_signs(s)

    def permute_columns(self, perm: Sequence[int]) -> "ConstraintMatrix":
        return ConstraintMatrix.from_signs(self._signs[:, list(perm)])

    def gauge(self, x: SpinVector) -> "ConstraintMatrix":
        """G_{j,i} → X_i G_{j,i}"""
        if x.n != self.n:
            raise PreconditionError(f"spin length {x.n} != matrix width {self.n}")
        return ConstraintMatrix.from_signs(self._signs * x.signs()[None, :])

    def to_fixture_text(self, kappa: KappaLike) -> str:
        lines = [f"{MATRIX_FIXTURE_MAGIC} {MATRIX_FIXTURE_VERSION} {self.n} {self.m} {kappa}"]
        for row in _unpack_rows(self.packed, self.n):
            lines.append("".join("+" if b else "-" for b in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_fixture_text(cls, text: str) -> Tuple["ConstraintMatrix", str]:
        """解析 'SBP v1 n m kappa' + m 行 '+'/'-'；返回 (矩阵, κ 字符串)"""
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DomainError("empty matrix fixture")
        header = lines[0].split()
        if len(header) != 5 or header[0] != MATRIX_FIXTURE_MAGIC or header[1] != MATRIX_FIXTURE_VERSION:
            raise DomainError(f"bad matrix fixture header: {lines[0]!r}")
        n, m, kappa = int(header[2]), int(header[3]), header[4]
        rows = [ln for ln in lines[1:] if not ln.startswith("X ")]
        if len(rows) != m:
            raise DomainError(f"expected {m} matrix rows, got {len(rows)}")
        bits = np.array([_parse_sign_line(r, n) for r in rows], dtype=np.uint8).reshape(m, n)
        return cls.from_bits(bits), kappa

    def __eq__(self, other) -> bool:
        return (isinstance(other, ConstraintMatrix) and self.n == other.n and self.m == other.m
                and np.array_equal(self.packed, other.packed))

    def __hash__(self) -> int:
        return hash((self.n, self.m, self.packed.tobytes()))


@dataclass(frozen=True)
class SolutionSet:
    """Z = |S(G)|；小 n 时附带解列表（以自旋整数表示）"""
    count: int
    n: int
    solution_ints: Optional[Tuple[int, ...]] = None

    @property
    def solutions(self) -> Optional[List[SpinVector]]:
        if self.solution_ints is None:
            return None
        return [SpinVector.from_int(v, self.n) for v in self.solution_ints]


# ─────────────────────────── 约束判定 ───────────────────────────────


def sample_matrix(params: ModelParams, rng: Optional[np.random.Generator] = None) -> ConstraintMatrix:
    """i.i.d. Rademacher 矩阵；不传 rng 时由 params.seed 决定"""
    rng = rng if rng is not None else make_rng(params.seed)
    bits = rng.integers(0, 2, size=(params.m, params.n), dtype=np.uint8)
    return ConstraintMatrix.from_bits(bits)


def _check_dims(G: ConstraintMatrix, X: SpinVector) -> None:
    if G.n != X.n:
        raise PreconditionError(f"matrix has {G.n} columns but spin vector has length {X.n}")


def row_sum(G: ConstraintMatrix, j: int, X: SpinVector) -> int:
    """⟨G_j, X⟩ = n − 2·popcount(G_j xor X)"""
    _check_dims(G, X)
    if not 0 <= j < G.m:
        raise DomainError(f"row index {j} out of range [0, {G.m})")
    return G.n - 2 * (G.row_int(j) ^ X.to_int()).bit_count()


def row_sums(G: ConstraintMatrix, X: SpinVector) -> np.ndarray:
    _check_dims(G, X)
    return G.signs() @ X.signs()


def satisfies(G: ConstraintMatrix, X: SpinVector, kappa: KappaLike) -> bool:
    b = integer_band(kappa, G.n)
    return bool(np.all(np.abs(row_sums(G, X)) <= b))


# ─────────────────────────── 一、二阶矩 ─────────────────────────────


def expected_Z(params: ModelParams) -> float:
    """log E[Z] = n log 2 + m log P_{κ,n}"""
    if params.m == 0:
        return params.n * _LOG2
    dc = discrete_constants(params.kappa, params.n, params.m)
    return params.n * _LOG2 + params.m * dc.log_p_kappa_n


def t_from_agreements(n: int, agreements: int) -> float:
    return (2 * agreements - n) / math.sqrt(n)


def agreements_from_t(n: int, t: float) -> int:
    """n/2 + t√n/2 必须是 [0, n] 内的整数"""
    a_real = n / 2.0 + t * math.sqrt(n) / 2.0
    a = int(round(a_real))
    if abs(a - a_real) > 1e-9 * max(1.0, n) or not 0 <= a <= n:
        raise DomainError(f"overlap t={t} is infeasible for n={n}")
    return a


def pair_row_log_prob(n: int, band: int, agreements: int) -> float:
    """
    单行同时满足两个约束的概率（对数），X1、X2 在 a 个坐标上一致。

    一致块的部分和 s_A = 2u − a，不一致块 s_D = 2v − (n − a)，
    S1 = s_A + s_D，S2 = s_A − s_D；由 |S1|,|S2| ≤ b 得 |s_A|,|s_D| ≤ b，据此裁剪求和范围。
    """
    a = agreements
    if not 0 <= a <= n:
        raise DomainError(f"agreements must lie in [0, {n}], got {a}")
    d = n - a
    u = np.arange(a + 1)
    v = np.arange(d + 1)
    u = u[np.abs(2 * u - a) <= band]
    v = v[np.abs(2 * v - d) <= band]
    if u.size == 0 or v.size == 0:
        return -math.inf
    s_a = (2 * u - a)[:, None]
    s_d = (2 * v - d)[None, :]
    mask = (np.abs(s_a + s_d) <= band) & (np.abs(s_a - s_d) <= band)
    if not mask.any():
        return -math.inf
    logw = log_binomial(a, u)[:, None] + log_binomial(d, v)[None, :] - n * _LOG2
    return float(special.logsumexp(logw[mask]))


def pair_row_log_probs(n: int, band: int) -> np.ndarray:
    """a = 0..n 上的单行对数概率表"""
    return np.array([pair_row_log_prob(n, band, a) for a in range(n + 1)])


def parity_smoothed(row_logs: np.ndarray) -> np.ndarray:
    """
    相邻一致数上的 ¼/½/¼ 平均（对数空间，端点反射）。

    偶数 n 时 (s_A, s_D) 的奇偶由 a 的奇偶决定，单行概率随 a 的奇偶
    交替偏离 O(1/n)；m 次方后偏离是 O(1)。这个核消去周期 2 分量，
    平滑部分只多出 O(1/n²) 的曲率项。
    """
    row_logs = np.asarray(row_logs, dtype=float)
    if row_logs.size < 2:
        return row_logs.copy()
    padded = np.pad(row_logs, 1, mode="reflect")
    smoothed = 0.25 * padded[:-2] + 0.5 * padded[1:-1] + 0.25 * padded[2:]
    # 邻居不可行（b = 0 时一半的 a）就保留原值
    return np.where(np.isfinite(smoothed), smoothed, row_logs)


def pair_prob_at(params: ModelParams, agreements: int) -> float:
    """log P_t，以一致坐标数 a = n/2 + t√n/2 参数化"""
    if params.m == 0:
        return 0.0
    return params.m * pair_row_log_prob(params.n, params.band, agreements)


def pair_prob(params: ModelParams, t: float) -> float:
    """log P_t：给定 ⟨X1,X2⟩ = t√n 的两个向量同时为解的概率"""
    return pair_prob_at(params, agreements_from_t(params.n, t))


def pair_prob_smoothed(params: ModelParams, t: float) -> float:
    """奇偶平滑后的 log P_t；与 Stirling 形式 exp(2β_n²(t²−1))·P_{κ,n}^{2m} 对照用这个"""
    a = agreements_from_t(params.n, t)
    if params.m == 0:
        return 0.0
    smoothed = parity_smoothed(pair_row_log_probs(params.n, params.band))
    return params.m * float(smoothed[a])


def second_moment_ratio(params: ModelParams, *, smoothed: bool = False) -> float:
    """
    E[Z²]/(E[Z])² = 2^{−n} Σ_a C(n,a) P_a / P_{κ,n}^{2m}

    smoothed=True 时 P_a 换成奇偶平滑后的值；精确比值带一个不随 n 衰减的
    格点因子（约 cosh(m·δ)，δ 为单行奇偶振幅），平滑比值才逼近
    exp(−2β_n²)/√(1−4β_n²)。
    """
    n, m = params.n, params.m
    band = params.band
    if m == 0 or band >= n:
        return 1.0
    log_p = discrete_constants(params.kappa, n, m).log_p_kappa_n
    if not math.isfinite(log_p):
        raise DomainError("P_{kappa,n} = 0: the first moment vanishes")
    a = np.arange(n + 1)
    row = pair_row_log_probs(n, band)
    if smoothed:
        row = parity_smoothed(row)
    terms = log_binomial(n, a) - n * _LOG2 + m * row - 2 * m * log_p
    ratio = math.exp(float(special.logsumexp(terms)))
    logger.debug("second moment ratio n=%d m=%d smoothed=%s: %.12g", n, m, smoothed, ratio)
    return ratio
