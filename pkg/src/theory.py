"""
连续理论常数与有限 n 离散类比

P_κ、μ_{2,κ}、β、α_c(κ)、重叠函数 q_κ(x) / F(x)、对数正态极限参数，
以及 P_{κ,n}、μ_{2,κ,n}、β_n。全部是纯函数，可在任意 worker 中并发调用。
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import integrate, optimize, special

from .errors import BoundaryError, DomainError, NumericError

logger = logging.getLogger(__name__)

KappaLike = Union[float, int, str, Fraction]

_SQRT2 = math.sqrt(2.0)
_LOG2 = math.log(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# erfc(κ/√2) 在 κ ≈ 38.5 以上下溢为 0，此时 log P_κ == 0，α_c 返回 +inf
ALPHA_C_KAPPA_CAP = 38.5

# μ_{2,κ} 小 κ 时闭式相消严重，改用级数
_MU2_SERIES_BELOW = 1e-3

# q_κ 积分容差
Q_QUAD_EPSABS = 1e-13
Q_QUAD_TOLERANCE = 1e-8

HYPOTHESIS_GRID_POINTS = 2048
HYPOTHESIS_EPS = 1e-4
HYPOTHESIS_XTOL = 1e-9

# Y_{M1} 极限均值系数：P → −L/4，P* → L/4，P*²_t → 3L/4
_Y_MEAN_SHIFT = {"null": -0.25, "planted": 0.25, "pair": 0.75}


# ─────────────────────────── 数据类 ─────────────────────────────────


@dataclass(frozen=True)
class TheoryConstants:
    kappa: float
    alpha: float
    p_kappa: float
    mu2_kappa: float
    beta: float
    alpha_c: float
    # α ≥ α_c 时对数正态参数无定义
    lognormal_mu: Optional[float] = None
    lognormal_sigma2: Optional[float] = None


@dataclass(frozen=True)
class DiscreteConstants:
    n: int
    m: int
    band: int
    p_kappa_n: float
    log_p_kappa_n: float
    mu2_kappa_n: float
    beta_n: float


@dataclass(frozen=True)
class OverlapFunction:
    x: float
    q_value: float
    F_value: float
    F_prime: float
    F_second: float


@dataclass(frozen=True)
class FValue:
    value: float
    d1: float
    d2: float


@dataclass
class Hypothesis1Report:
    kappa: float
    alpha: float
    f2_half: float
    root_count: int
    roots: List[float] = field(default_factory=list)
    grid_points: int = HYPOTHESIS_GRID_POINTS
    # F(1/2) 与各根处的 F；根处 F 不低于 F(1/2) 时二阶矩方法失效
    f_half: float = math.nan
    root_values: List[float] = field(default_factory=list)

    @property
    def f2_half_negative(self) -> bool:
        return self.f2_half < 0

    @property
    def mirrored_roots(self) -> List[float]:
        return [1.0 - r for r in self.roots]

    @property
    def deviation(self) -> bool:
        """F''(1/2) < 0 但根数不为 1：记录为发现，不算失败"""
        return self.f2_half_negative and self.root_count != 1

    @property
    def half_is_max(self) -> bool:
        return all(v < self.f_half for v in self.root_values)

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "alpha": self.alpha,
            "f2_half": self.f2_half,
            "f2_half_negative": self.f2_half_negative,
            "root_count": self.root_count,
            "roots": list(self.roots),
            "f_half": self.f_half,
            "root_values": list(self.root_values),
            "half_is_max": self.half_is_max,
            "deviation": self.deviation,
        }


# ─────────────────────────── 基础工具 ───────────────────────────────


def _check_kappa(kappa: KappaLike) -> float:
    try:
        k = float(kappa)
    except (TypeError, ValueError) as e:
        raise DomainError(f"kappa is not a number: {kappa!r}") from e
    if not math.isfinite(k) or k <= 0:
        raise DomainError(f"kappa must be a positive finite number, got {kappa!r}")
    return k


def exact_kappa(kappa: KappaLike) -> Fraction:
    """κ 的精确有理表示（十进制字符串按字面解析）"""
    if isinstance(kappa, Fraction):
        frac = kappa
    else:
        try:
            frac = Fraction(str(kappa).strip())
        except (ValueError, ZeroDivisionError) as e:
            raise DomainError(f"kappa is not a decimal number: {kappa!r}") from e
    if frac <= 0:
        raise DomainError(f"kappa must be positive, got {kappa!r}")
    return frac


def integer_band(kappa: KappaLike, n: int) -> int:
    """
    整数带宽 b：对整数 S，|S| ≤ κ√n  ⇔  S² ≤ ⌊κ²n⌋  ⇔  |S| ≤ isqrt(⌊κ²n⌋)。
    等号（S² = κ²n）按接受处理。
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    frac = exact_kappa(kappa)
    return math.isqrt(math.floor(frac * frac * n))


def log_binomial(n: int, k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return special.gammaln(n + 1.0) - special.gammaln(k + 1.0) - special.gammaln(n - k + 1.0)


# ─────────────────────────── 连续常数 ───────────────────────────────


def p_kappa(kappa: KappaLike) -> float:
    """P_κ = P(|N| ≤ κ) = 2Φ(κ) − 1"""
    k = _check_kappa(kappa)
    return float(special.erf(k / _SQRT2))


def log_p_kappa(kappa: KappaLike) -> float:
    k = _check_kappa(kappa)
    if k > 1.0:
        return math.log1p(-float(special.erfc(k / _SQRT2)))
    p = float(special.erf(k / _SQRT2))
    if p > 0.0:
        return math.log(p)
    # erf 下溢：erf(x) ≈ 2x/√π
    return math.log(k) + 0.5 * math.log(2.0 / math.pi)


def mu2_kappa(kappa: KappaLike) -> float:
    """μ_{2,κ} = E[N² | |N| ≤ κ] = 1 − 2κφ(κ)/P_κ"""
    k = _check_kappa(kappa)
    if k < _MU2_SERIES_BELOW:
        k2 = k * k
        return k2 / 3.0 * (1.0 - 2.0 * k2 / 15.0 + 2.0 * k2 * k2 / 315.0)
    phi = math.exp(-0.5 * k * k) * _INV_SQRT_2PI
    return 1.0 - 2.0 * k * phi / p_kappa(k)


def mu2_kappa_quadrature(kappa: KappaLike) -> float:
    """μ_{2,κ} 的定义积分（自适应求积），用于交叉验证闭式"""
    k = _check_kappa(kappa)
    upper = min(k, 40.0)
    val, err = integrate.quad(
        lambda z: z * z * math.exp(-0.5 * z * z) * _INV_SQRT_2PI,
        0.0, upper, epsabs=1e-15, epsrel=1e-13, limit=200,
    )
    if not math.isfinite(val):
        raise NumericError(f"mu2 quadrature failed for kappa={kappa}")
    return 2.0 * val / p_kappa(k)


def beta(kappa: KappaLike, alpha: float) -> float:
    """β = −(√α/2)(1 − μ_{2,κ})"""
    if alpha < 0 or not math.isfinite(alpha):
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    return -(math.sqrt(alpha) / 2.0) * (1.0 - mu2_kappa(kappa))


def alpha_c(kappa: KappaLike) -> float:
    """容量密度 α_c(κ) = −log 2 / log P_κ；κ 超过上限时返回 +inf"""
    lp = log_p_kappa(kappa)
    if lp == 0.0:
        return math.inf
    return -_LOG2 / lp


# ─────────────────────────── 重叠函数 ───────────────────────────────


def _interval_prob(lo: float, hi: float) -> float:
    """P(lo ≤ N ≤ hi)，两端同号时用对侧尾部避免相消"""
    if lo > 0.0:
        return float(special.ndtr(-lo) - special.ndtr(-hi))
    return float(special.ndtr(hi) - special.ndtr(lo))


def q_kappa(x: float, kappa: KappaLike) -> float:
    """
    q_κ(x) = P(|N1| ≤ κ, |N2| ≤ κ)，相关系数 2x − 1。

    只依赖 |2x − 1|（N2 → −N2），按 N1 条件化化为一维积分：
        ∫_{−κ}^{κ} φ(z) P(|ρz + sW| ≤ κ) dz,  s = √(1 − ρ²) = 2√(x(1−x))
    """
    k = _check_kappa(kappa)
    if not (0.0 <= x <= 1.0):
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return p_kappa(k)
    rho = abs(2.0 * x - 1.0)
    if rho == 0.0:
        return p_kappa(k) ** 2
    s = 2.0 * math.sqrt(x * (1.0 - x))

    def integrand(z: float) -> float:
        return math.exp(-0.5 * z * z) * _INV_SQRT_2PI * _interval_prob(
            (-k - rho * z) / s, (k - rho * z) / s
        )

    # 被积函数关于 z 偶对称
    val, err = integrate.quad(integrand, 0.0, min(k, 40.0),
                              epsabs=Q_QUAD_EPSABS, epsrel=1e-12, limit=200)
    if not math.isfinite(val) or err > Q_QUAD_TOLERANCE:
        raise NumericError(f"q_kappa quadrature failed: x={x}, kappa={kappa}, err={err:.3g}")
    return 2.0 * val


def _entropy(x: float) -> float:
    return float(special.entr(x) + special.entr(1.0 - x))


def _F(x: float, kappa: float, alpha: float) -> float:
    if alpha == 0.0:
        return _entropy(x)
    return alpha * math.log(q_kappa(x, kappa)) + _entropy(x)


def _check_open_unit(x: float) -> None:
    if x == 0.0 or x == 1.0:
        raise BoundaryError(f"F is evaluated on the open interval (0, 1), got x={x}")
    if not (0.0 < x < 1.0):
        raise DomainError(f"x must lie in (0, 1), got {x}")


def _F_prime(x: float, kappa: float, alpha: float) -> float:
    h = 1e-5 * x * (1.0 - x)
    return (_F(x + h, kappa, alpha) - _F(x - h, kappa, alpha)) / (2.0 * h)


def big_F(x: float, kappa: KappaLike, alpha: float) -> FValue:
    """
    F(x) = α log q_κ(x) − x log x − (1−x) log(1−x) 及其一、二阶导。

    导数用中心差分：F' 步长 1e-5·x(1−x)，F'' 步长 1e-3·x(1−x)。
    """
    k = _check_kappa(kappa)
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    _check_open_unit(x)
    f0 = _F(x, k, alpha)
    d1 = _F_prime(x, k, alpha)
    h2 = 1e-3 * x * (1.0 - x)
    d2 = (_F(x + h2, k, alpha) - 2.0 * f0 + _F(x - h2, k, alpha)) / (h2 * h2)
    return FValue(value=f0, d1=d1, d2=d2)


def overlap_function(x: float, kappa: KappaLike, alpha: float) -> OverlapFunction:
    fv = big_F(x, kappa, alpha)
    return OverlapFunction(x=x, q_value=q_kappa(x, kappa), F_value=fv.value,
                           F_prime=fv.d1, F_second=fv.d2)


def hypothesis1_check(
    kappa: KappaLike,
    alpha: float,
    grid_points: int = HYPOTHESIS_GRID_POINTS,
    eps: float = HYPOTHESIS_EPS,
) -> Hypothesis1Report:
    """
    在 (ε, 1/2 − ε) 网格上扫描 F' 的符号变化，二分细化到 1e-9。
    只报告根数与位置，不断言假设成立。
    """
    k = _check_kappa(kappa)
    if alpha < 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    xs = np.linspace(eps, 0.5 - eps, grid_points)
    d1 = np.array([_F_prime(float(x), k, alpha) for x in xs])
    signs = np.sign(d1)

    roots: List[float] = []
    for i in range(grid_points - 1):
        if signs[i] == 0.0:
            roots.append(float(xs[i]))
        elif signs[i] * signs[i + 1] < 0:
            root = optimize.bisect(_F_prime, float(xs[i]), float(xs[i + 1]),
                                   args=(k, alpha), xtol=HYPOTHESIS_XTOL)
            roots.append(float(root))

    half = overlap_function(0.5, k, alpha)
    report = Hypothesis1Report(kappa=k, alpha=alpha, f2_half=half.F_second,
                               root_count=len(roots), roots=roots, grid_points=grid_points,
                               f_half=half.F_value,
                               root_values=[overlap_function(r, k, alpha).F_value for r in roots])
    if report.deviation:
        logger.warning("Hypothesis-1 deviation at kappa=%s alpha=%s: %d roots", k, alpha, len(roots))
    return report


# ─────────────────────────── 对数正态极限 ─────────────────────────────


def lognormal_params_from_beta(beta_value: float) -> Tuple[float, float]:
    """μ = ¼log(1−4β²) + β²，σ² = −2μ"""
    if not abs(beta_value) < 0.5:
        raise DomainError(f"|beta| must be < 1/2, got {beta_value}")
    u = 4.0 * beta_value * beta_value
    mu = 0.25 * math.log1p(-u) + beta_value * beta_value
    return mu, -2.0 * mu


def lognormal_params(kappa: KappaLike, alpha: float) -> Tuple[float, float]:
    if alpha >= alpha_c(kappa):
        raise DomainError(f"alpha={alpha} is not below alpha_c(kappa={kappa})")
    return lognormal_params_from_beta(beta(kappa, alpha))


def second_moment_limit(beta_value: float) -> float:
    """E[(Z/EZ)²] 的极限 exp(2μ + 2σ²) = exp(−2β²)/√(1−4β²)"""
    if not abs(beta_value) < 0.5:
        raise DomainError(f"|beta| must be < 1/2, got {beta_value}")
    return math.exp(-2.0 * beta_value ** 2) / math.sqrt(1.0 - 4.0 * beta_value ** 2)


def l_series(m1: int, beta_value: float) -> float:
    """L(M1) = Σ_{k=2}^{M1} (2β)^{2k}/k"""
    if m1 < 2:
        raise DomainError(f"M1 must be >= 2, got {m1}")
    b2 = (2.0 * beta_value) ** 2
    return math.fsum(b2 ** k / k for k in range(2, m1 + 1))


def l_series_limit(beta_value: float) -> float:
    """lim_{M1→∞} L(M1) = −log(1−4β²) − 4β²"""
    if not abs(beta_value) < 0.5:
        raise DomainError(f"|beta| must be < 1/2, got {beta_value}")
    u = 4.0 * beta_value * beta_value
    return -math.log1p(-u) - u


def truncation_bias_bound(beta_value: float, m1: int) -> float:
    """截断偏差界 (2β)^{2M1}·[(1−4β²)^{−2} + (1−|2β|)^{−2}]"""
    if not abs(beta_value) < 0.5:
        raise DomainError(f"|beta| must be < 1/2, got {beta_value}")
    b = 2.0 * beta_value
    return b ** (2 * m1) * ((1.0 - b * b) ** -2 + (1.0 - abs(b)) ** -2)


def y_limit_law(beta_value: float, m1: int, measure: str) -> Tuple[float, float]:
    """Y_{M1} 的极限正态律 (mean, var)：measure ∈ {null, planted, pair}"""
    if measure not in _Y_MEAN_SHIFT:
        raise DomainError(f"unknown measure {measure!r}")
    L = l_series(m1, beta_value)
    return _Y_MEAN_SHIFT[measure] * L, 0.5 * L


def theory_constants(kappa: KappaLike, alpha: float) -> TheoryConstants:
    k = _check_kappa(kappa)
    ac = alpha_c(k)
    b = beta(k, alpha)
    mu = sigma2 = None
    if alpha < ac:
        mu, sigma2 = lognormal_params_from_beta(b)
    return TheoryConstants(kappa=k, alpha=alpha, p_kappa=p_kappa(k), mu2_kappa=mu2_kappa(k),
                           beta=b, alpha_c=ac, lognormal_mu=mu, lognormal_sigma2=sigma2)


# ─────────────────────────── 离散类比 ───────────────────────────────


def discrete_constants(kappa: KappaLike, n: int, m: int) -> DiscreteConstants:
    """
    P_{κ,n}、μ_{2,κ,n}、β_n（对数空间二项求和）。

    μ_{2,κ,n} 按条件二阶矩读取：求和限制在 |2t − n| ≤ κ√n 上，
    这样才与 μ_{2,κ} < 1 的极限一致。
    """
    if n < 1 or m < 1:
        raise DomainError(f"n and m must be >= 1, got n={n}, m={m}")
    band = integer_band(kappa, n)
    if band >= n:
        # 约束空洞：每个和都落在带内
        log_p, mu2 = 0.0, 1.0
    elif band == 0 and n % 2 == 1:
        # 奇数 n 的和永远非零：P_{κ,n} = 0，条件矩无定义
        log_p, mu2 = -math.inf, math.nan
    else:
        t = np.arange(n + 1)
        s = 2 * t - n
        mask = np.abs(s) <= band
        logw = log_binomial(n, t[mask]) - n * _LOG2
        log_p = float(special.logsumexp(logw))
        weights = np.exp(logw - log_p)
        mu2 = float(np.sum(weights * s[mask].astype(float) ** 2) / n)
    beta_n = -(math.sqrt(m) / (2.0 * math.sqrt(n))) * (1.0 - mu2)
    return DiscreteConstants(n=n, m=m, band=band, p_kappa_n=math.exp(log_p),
                             log_p_kappa_n=log_p, mu2_kappa_n=mu2, beta_n=beta_n)
