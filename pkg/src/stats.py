"""
统计判定：分布拟合、矩检验、方差缩减

所有检验只依赖输入样本（内部无随机性），输出统一的 TestVerdict。
hard=True 的判定决定 CLI 的退出码；hard=False 的只写入报告。
"""

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .errors import DomainError, PreconditionError

logger = logging.getLogger(__name__)

KS_SERIES_TERMS = 100
KS_PASS_PVALUE = 0.01
MIN_MOMENT_SAMPLES = 30


@dataclass(frozen=True)
class SampleBatch:
    values: np.ndarray
    label: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float).ravel()
        if arr.size < 2:
            raise DomainError(f"batch {self.label!r} needs at least 2 values")
        if not np.all(np.isfinite(arr)):
            raise DomainError(f"batch {self.label!r} contains non-finite values")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return int(self.values.size)


BatchLike = Union[SampleBatch, Sequence[float], np.ndarray]


@dataclass
class TestVerdict:
    __test__ = False

    name: str
    statistic: float
    threshold: float
    p_value_or_band: float
    passed: bool
    details: str = ""
    hard: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _values(batch: BatchLike) -> np.ndarray:
    if isinstance(batch, SampleBatch):
        return batch.values
    return SampleBatch(values=np.asarray(batch, dtype=float)).values


def degenerate_verdict(name: str, details: str) -> TestVerdict:
    """退化区间（例如 Z 全为 0）不做检验，只记录原因"""
    logger.warning("%s: degenerate regime, %s", name, details)
    return TestVerdict(name=name, statistic=math.nan, threshold=math.nan,
                       p_value_or_band=math.nan, passed=False, details=details, hard=False)


# ─────────────────────────── 分布拟合 ───────────────────────────────


def kolmogorov_pvalue(lam: float, terms: int = KS_SERIES_TERMS) -> float:
    """Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2j²λ²)，截断到 terms 项"""
    if lam <= 0:
        return 1.0
    j = np.arange(1, terms + 1)
    q = 2.0 * np.sum((-1.0) ** (j - 1) * np.exp(-2.0 * j * j * lam * lam))
    return float(min(1.0, max(0.0, q)))


def ks_lognormal(
    batch: BatchLike,
    mu: float,
    sigma2: float,
    *,
    name: str = "ks_lognormal",
    p_threshold: float = KS_PASS_PVALUE,
) -> TestVerdict:
    """单样本 KS：样本 vs Lognormal(mu, sigma2)，通过条件 p > p_threshold"""
    x = _values(batch)
    if np.any(x <= 0):
        raise DomainError("lognormal KS needs strictly positive values")
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be > 0, got {sigma2}")
    z = np.sort((np.log(x) - mu) / math.sqrt(sigma2))
    cdf = special.ndtr(z)
    n = z.size
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    p = kolmogorov_pvalue(math.sqrt(n) * d)
    return TestVerdict(
        name=name,
        statistic=d,
        threshold=p_threshold,
        p_value_or_band=p,
        passed=p > p_threshold,
        details=f"N={n} D={d:.6g} p={p:.4g} vs Lognormal({mu:.6g}, {sigma2:.6g})",
    )


# ─────────────────────────── 矩检验 ─────────────────────────────────


def mean_variance_check(
    batch: BatchLike,
    target_mean: float,
    target_var: Optional[float] = None,
    se_mult: float = 3.0,
    *,
    var_band: float = 0.15,
    name: str = "mean_variance",
    hard: bool = True,
) -> TestVerdict:
    """
    均值落在 se_mult 个标准误内；target_var 给定时，样本方差的相对误差 ≤ var_band。
    """
    x = _values(batch)
    n = x.size
    if n < MIN_MOMENT_SAMPLES:
        raise PreconditionError(f"{name}: need at least {MIN_MOMENT_SAMPLES} samples, got {n}")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    se = math.sqrt(var / n)
    if se > 0:
        z = (mean - target_mean) / se
    else:
        z = 0.0 if mean == target_mean else math.inf
    mean_ok = abs(z) <= se_mult

    var_ok = True
    rel = math.nan
    if target_var is not None:
        rel = abs(var - target_var) / target_var if target_var != 0 else abs(var)
        var_ok = rel <= var_band

    details = f"N={n} mean={mean:.6g}±{se:.3g} (target {target_mean:.6g}) var={var:.6g}"
    if target_var is not None:
        details += f" (target {target_var:.6g}, rel {rel:.3g})"
    return TestVerdict(
        name=name,
        statistic=z,
        threshold=se_mult,
        p_value_or_band=var_band if target_var is not None else math.nan,
        passed=bool(mean_ok and var_ok),
        details=details,
        hard=hard,
        extra={"mean": mean, "se": se, "var": var, "target_mean": target_mean, "target_var": target_var},
    )


def _wick_moment(alpha: Sequence[int], variances: Sequence[float]) -> float:
    """独立中心高斯的混合矩 Π (α−1)!!·v^{α/2}（任一 α 为奇数时为 0）"""
    value = 1.0
    for a, v in zip(alpha, variances):
        if a % 2:
            return 0.0
        value *= special.factorial2(a - 1, exact=True) * v ** (a // 2) if a else 1.0
    return value


def wick_joint_moments(
    batches: Mapping[int, BatchLike],
    max_degree: int = 4,
    *,
    variances: Optional[Mapping[int, float]] = None,
    z_threshold: float = 4.0,
    name: str = "wick_joint_moments",
    hard: bool = False,
) -> TestVerdict:
    """
    (C_2, …, C_K) 的经验混合矩 vs 独立高斯（方差 2k）的 Wick 值；报告最差 z 分数。
    batches 的键为 k，各批次来自同一组实例、按实例对齐。
    """
    ks = sorted(batches)
    cols = [_values(batches[k]) for k in ks]
    if len({c.size for c in cols}) != 1:
        raise DomainError("joint moment batches must have equal lengths")
    X = np.column_stack(cols)
    n = X.shape[0]
    var = [float(variances[k]) if variances else 2.0 * k for k in ks]

    worst_z = 0.0
    worst_alpha: Tuple[int, ...] = ()
    for alpha in itertools.product(range(max_degree + 1), repeat=len(ks)):
        degree = sum(alpha)
        if degree == 0 or degree > max_degree:
            continue
        prod = np.prod(X ** np.array(alpha), axis=1)
        emp = float(prod.mean())
        target = _wick_moment(alpha, var)
        se = float(prod.std(ddof=1) / math.sqrt(n))
        if se > 0:
            z = abs(emp - target) / se
        else:
            z = 0.0 if emp == target else math.inf
        if z > worst_z:
            worst_z, worst_alpha = z, alpha

    return TestVerdict(
        name=name,
        statistic=worst_z,
        threshold=z_threshold,
        p_value_or_band=float(max_degree),
        passed=worst_z <= z_threshold,
        details=f"N={n} ks={ks} worst |z|={worst_z:.3g} at alpha={worst_alpha}",
        hard=hard,
    )


# ─────────────────────────── 方差缩减 ───────────────────────────────


def variance_reduction(
    log_ratio_batch: BatchLike,
    y_batch: BatchLike,
    max_fraction: float = 0.35,
    *,
    name: str = "variance_reduction",
    hard: bool = True,
) -> TestVerdict:
    """Var(log(Z/EZ) − Y) / Var(log(Z/EZ))，小于 max_fraction 判为通过"""
    lr = _values(log_ratio_batch)
    y = _values(y_batch)
    if lr.size != y.size:
        raise DomainError(f"unpaired batches: {lr.size} vs {y.size}")
    base = float(lr.var(ddof=1))
    if base == 0:
        return degenerate_verdict(name, "log-ratio has zero variance")
    ratio = float((lr - y).var(ddof=1)) / base
    return TestVerdict(
        name=name,
        statistic=ratio,
        threshold=max_fraction,
        p_value_or_band=max_fraction,
        passed=ratio < max_fraction,
        details=f"N={lr.size} Var(log-ratio)={base:.6g} residual fraction={ratio:.4g}",
        hard=hard,
    )


def proportion_estimate(successes: int, trials: int, z: float = 1.96) -> Tuple[float, float, float]:
    """比例估计与 Wilson 区间 (p, lo, hi)"""
    if trials <= 0:
        raise DomainError("proportion needs at least one trial")
    if not 0 <= successes <= trials:
        raise DomainError(f"successes must lie in [0, {trials}], got {successes}")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    return p, max(0.0, center - half), min(1.0, center + half)
