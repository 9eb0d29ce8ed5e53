"""
实验编排：把理论结论落成可复现的有限 n 实验

实验                 子命令        内容
exp_lognormal        lognormal     Z/E[Z] 的对数正态极限（KS + 均值方差）
exp_cycle_normality  cycles        C_k 在 P / P* / P*²_t 下的均值方差与 Wick 矩
exp_convinp          convinp       Y_{M1} 解释 log(Z/E[Z]) 方差的比例
exp_threshold        threshold     P(Z ≥ 1) 随 α 的变化与 α̂(n)
exp_freezing         freezing      均匀解附近 ⌈d·n⌉ 半径内的最近解
exp_contiguity       contiguity    P 与 P* 下同一事件的概率（探索性）
exp_hypothesis       hypothesis    F'(x) 在 (0, 1/2) 内的根数网格报告
exp_constants        constants     理论常数、离散常数与二阶矩比

每个副本的随机流由 (base seed, 流编号, 副本号) 决定，记录与 worker 数无关。
"""

import logging
import math
import platform
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy
from scipy import special

from .counting import count_solutions, nearest_other_solution, sample_uniform_solution
from .cycles import CycleStats, correction_from_stats, cycle_stat_fast, cycle_stats
from .errors import CapabilityError, ConfigError, DomainError, SamplingError
from .experiment_config import ExperimentConfig, load_experiment_config
from .model import ModelParams, expected_Z, sample_matrix, second_moment_ratio
from .planted import CorrelationEstimate, planted_row_correlation, sample_planted, sample_planted_pair
from .record_store import ExperimentRecord, RecordSink
from .replica_pool import run_replicas
from .retry_utils import retry_call
from .seeding import make_rng, replica_rng, replica_seed
from .settings import get_settings
from .stats import (
    MIN_MOMENT_SAMPLES,
    TestVerdict,
    degenerate_verdict,
    ks_lognormal,
    mean_variance_check,
    proportion_estimate,
    variance_reduction,
    wick_joint_moments,
)
from .theory import (
    alpha_c,
    beta,
    discrete_constants,
    hypothesis1_check,
    lognormal_params_from_beta,
    second_moment_limit,
    theory_constants,
    truncation_bias_bound,
    y_limit_law,
)

logger = logging.getLogger(__name__)

# 随机流编号；同名流在不同实验间共享（lognormal 与 convinp 用同一批 G）
STREAMS = {
    "count": 1,
    "cycles_null": 2,
    "cycles_planted": 3,
    "cycles_pair": 4,
    "threshold": 5,
    "freezing": 6,
    "contiguity_null": 7,
    "contiguity_planted": 8,
    "rows": 9,
}

# |β| 低于此值视为无信号
NO_SIGNAL_BETA = 1e-9


@dataclass
class ExperimentResult:
    name: str
    records: List[Dict[str, Any]] = field(default_factory=list)
    verdicts: List[TestVerdict] = field(default_factory=list)
    report: Dict[str, Any] = field(default_factory=dict)
    timings: List[Dict[str, Any]] = field(default_factory=list)

    def extend(self, other: "ExperimentResult") -> None:
        self.records.extend(other.records)
        self.verdicts.extend(other.verdicts)
        self.report.update(other.report)
        self.timings.extend(other.timings)


@dataclass
class RunOutcome:
    exit_status: int
    result: ExperimentResult
    out_dir: Path
    config: ExperimentConfig

    @property
    def failed_hard(self) -> List[TestVerdict]:
        return [v for v in self.result.verdicts if v.hard and not v.passed]


# ─────────────────────────── 公共工具 ───────────────────────────────


def _stream(name: str, n: int, point: int = 0) -> int:
    return (STREAMS[name] << 32) | (point << 16) | n


def _beta_for(config: ExperimentConfig, params: ModelParams) -> float:
    if params.m == 0:
        return 0.0
    if config.beta_convention == "beta":
        return beta(params.kappa, params.alpha)
    return discrete_constants(params.kappa, params.n, params.m).beta_n


def _stats_from_record(record: Dict[str, Any], m1: int) -> CycleStats:
    values = {k: float(record[f"c{k}"]) for k in range(2, m1 + 1)}
    return CycleStats(n=record["n"], m=record["m"], method="fast", values=values)


def _run(
    func: Callable[[Any], Dict[str, Any]],
    payloads: Sequence[Any],
    config: ExperimentConfig,
    desc: str,
    result: ExperimentResult,
) -> List[Dict[str, Any]]:
    tasks = list(enumerate(payloads))
    records, seconds = run_replicas(func, tasks, workers=config.workers, desc=desc)
    for (idx, _), rec, sec in zip(tasks, records, seconds):
        result.timings.append({"task": desc, "index": idx, "replica": rec.get("replica"), "seconds": sec})
    result.records.extend(records)
    return records


def _moment_verdict(
    values: Sequence[float],
    target_mean: float,
    target_var: Optional[float],
    *,
    name: str,
    se_mult: float,
    var_band: float,
    hard: bool,
) -> TestVerdict:
    if len(values) < MIN_MOMENT_SAMPLES:
        return degenerate_verdict(name, f"only {len(values)} samples (< {MIN_MOMENT_SAMPLES})")
    return mean_variance_check(values, target_mean, target_var, se_mult,
                               var_band=var_band, name=name, hard=hard)


def _correlation_verdict(est: CorrelationEstimate, name: str, se_mult: float) -> TestVerdict:
    return TestVerdict(
        name=name,
        statistic=est.z_score,
        threshold=se_mult,
        p_value_or_band=est.se,
        passed=abs(est.z_score) <= se_mult,
        details=(f"rows={est.count} mean={est.mean:.6g}±{est.se:.3g} "
                 f"target={est.target:.6g} leading={est.leading:.6g} "
                 f"z_target={est.z_score:.3g} z_leading={est.z_leading:.3g}"),
    )


def _soft(name: str, passed: bool, statistic: float, threshold: float, details: str) -> TestVerdict:
    return TestVerdict(name=name, statistic=statistic, threshold=threshold, p_value_or_band=math.nan,
                       passed=bool(passed), details=details, hard=False)


# ─────────────────────────── 副本函数（需可 pickle） ─────────────────


def _count_replica(payload) -> Dict[str, Any]:
    """G ~ P；精确 Z、E[Z]、C_2..C_{M1} 与 Y_{M1}"""
    config, config_hash, n, replica = payload
    params = config.params_for(n)
    seed = replica_seed(config.seed, _stream("count", n), replica)
    G = sample_matrix(params, make_rng(seed))
    Z = count_solutions(G, params.kappa).count
    log_ez = expected_Z(params)
    log_ratio = math.log(Z) - log_ez if Z > 0 else None
    stats = cycle_stats(G, config.m1)
    y = correction_from_stats(stats, _beta_for(config, params), config.m1, config.beta_convention).y
    fields = {
        "n": n,
        "m": params.m,
        "Z": Z,
        "log_EZ": log_ez,
        "ratio": math.exp(log_ratio) if log_ratio is not None else 0.0,
        "log_ratio": log_ratio,
        **stats.to_columns(),
        "Y": y,
    }
    return ExperimentRecord(config_hash, replica, seed, fields).to_dict()


def _sample_measure(config: ExperimentConfig, params: ModelParams, measure: str, rng):
    if measure == "null":
        return sample_matrix(params, rng)
    if measure == "planted":
        return sample_planted(params, rng).matrix
    return sample_planted_pair(params, config.t, rng).matrix


def _cycles_replica(payload) -> Dict[str, Any]:
    config, config_hash, n, replica = payload
    params = config.params_for(n)
    seed = replica_seed(config.seed, _stream(f"cycles_{config.measure}", n), replica)
    G = _sample_measure(config, params, config.measure, make_rng(seed))
    stats = cycle_stats(G, config.m1)
    y = correction_from_stats(stats, _beta_for(config, params), config.m1, config.beta_convention).y
    fields = {"n": n, "m": params.m, "measure": config.measure, **stats.to_columns(), "Y": y}
    if config.measure == "pair":
        fields["t"] = config.t
    return ExperimentRecord(config_hash, replica, seed, fields).to_dict()


def _threshold_replica(payload) -> Dict[str, Any]:
    config, config_hash, n, point, alpha, replica = payload
    params = config.params_for(n, alpha)
    seed = replica_seed(config.seed, _stream("threshold", n, point), replica)
    G = sample_matrix(params, make_rng(seed))
    Z = count_solutions(G, params.kappa).count
    fields = {"n": n, "alpha": params.alpha, "m": params.m, "Z": Z, "satisfiable": Z >= 1}
    return ExperimentRecord(config_hash, replica, seed, fields).to_dict()


def _freezing_radii(config: ExperimentConfig, n: int) -> List[Tuple[float, int]]:
    ds = sorted(set([1.0 / n] + list(config.distances)))
    return [(d, math.ceil(d * n - 1e-9)) for d in ds]


def _freezing_replica(payload) -> Dict[str, Any]:
    """G ~ P 条件于 Z ≥ 1（重抽），X 在 S(G) 中均匀，求半径内的最近其它解"""
    config, config_hash, n, point, alpha, replica = payload
    params = config.params_for(n, alpha)
    seed = replica_seed(config.seed, _stream("freezing", n, point), replica)
    budget = get_settings().harness.freezing_retry_budget

    def attempt(k: int):
        rng = replica_rng(seed, 0, k)
        G = sample_matrix(params, rng)
        X, Z = sample_uniform_solution(G, params.kappa, rng)
        if X is None:
            raise SamplingError("sampled matrix has no solutions")
        return G, X, Z, k + 1

    fields: Dict[str, Any] = {"n": n, "alpha": params.alpha, "m": params.m}
    try:
        G, X, Z, attempts = retry_call(attempt, max_attempts=budget, retry_exceptions=(SamplingError,))
    except SamplingError:
        fields.update({"Z": 0, "attempts": budget, "skipped": True, "nearest": None})
        return ExperimentRecord(config_hash, replica, seed, fields).to_dict()

    max_radius = max(r for _, r in _freezing_radii(config, n))
    nearest = nearest_other_solution(G, X, params.kappa, max_radius)
    fields.update({"Z": Z, "attempts": attempts, "skipped": False, "nearest": nearest})
    return ExperimentRecord(config_hash, replica, seed, fields).to_dict()


def _contiguity_event(config: ExperimentConfig, G, params: ModelParams) -> Dict[str, Any]:
    out: Dict[str, Any] = {"Z": None, "ratio": None, "c2": None}
    if config.event in ("ratio_below", "z_zero"):
        Z = count_solutions(G, params.kappa).count
        out["Z"] = Z
        out["ratio"] = math.exp(math.log(Z) - expected_Z(params)) if Z > 0 else 0.0
    if config.event == "ratio_below":
        out["event"] = out["ratio"] < config.tau
    elif config.event == "z_zero":
        out["event"] = out["Z"] == 0
    elif config.event == "c2_above":
        out["c2"] = cycle_stat_fast(G, 2)
        out["event"] = out["c2"] > config.c2_threshold
    else:
        out["event"] = True
    return out


def _contiguity_replica(payload) -> Dict[str, Any]:
    config, config_hash, n, measure, replica = payload
    params = config.params_for(n)
    seed = replica_seed(config.seed, _stream(f"contiguity_{measure}", n), replica)
    G = _sample_measure(config, params, measure, make_rng(seed))
    fields = {"n": n, "m": params.m, "measure": measure, **_contiguity_event(config, G, params)}
    return ExperimentRecord(config_hash, replica, seed, fields).to_dict()


def _hypothesis_task(payload) -> Dict[str, Any]:
    config, config_hash, index, kappa, alpha = payload
    report = hypothesis1_check(kappa, alpha, grid_points=config.grid_points)
    return ExperimentRecord(config_hash, index, config.seed, report.to_dict()).to_dict()


# ─────────────────────────── 实验 ───────────────────────────────────


def exp_lognormal(config: ExperimentConfig) -> ExperimentResult:
    """每个副本精确计数 Z，Z/E[Z] 对照有限 n 参数的对数正态"""
    result = ExperimentResult("lognormal")
    h = config.config_hash()
    se_mult = config.se_mult or 4.0
    var_band = config.var_band or 0.25
    for n in config.n:
        params = config.params_for(n)
        logger.info("lognormal: n=%d m=%d kappa=%s, %d replicas", n, params.m, params.kappa, config.replicas)
        records = _run(_count_replica, [(config, h, n, r) for r in range(config.replicas)],
                       config, f"lognormal n={n}", result)
        ratios = np.array([r["ratio"] for r in records])
        positive = ratios[ratios > 0]
        zeros = int(ratios.size - positive.size)
        if zeros:
            logger.warning("lognormal n=%d: %d replicas with Z = 0 excluded from the fit", n, zeros)
        beta_used = _beta_for(config, params)
        entry: Dict[str, Any] = {"m": params.m, "beta_used": beta_used, "zero_count": zeros,
                                 "mean_ratio": float(ratios.mean())}
        tag = f"[n={n}]"
        if abs(beta_used) < NO_SIGNAL_BETA or positive.size < 2 or np.ptp(positive) == 0:
            result.verdicts.append(degenerate_verdict(f"ks_lognormal{tag}", "ratios collapse to a constant"))
        else:
            try:
                mu, sigma2 = lognormal_params_from_beta(beta_used)
            except DomainError as e:
                result.verdicts.append(degenerate_verdict(f"ks_lognormal{tag}", str(e)))
            else:
                entry.update({"mu": mu, "sigma2": sigma2})
                result.verdicts.append(ks_lognormal(positive, mu, sigma2, name=f"ks_lognormal{tag}"))
                result.verdicts.append(_moment_verdict(
                    np.log(positive), mu, sigma2, name=f"log_ratio_moments{tag}",
                    se_mult=se_mult, var_band=var_band, hard=True))
        result.report[f"lognormal{tag}"] = entry
    return result


def exp_cycle_normality(config: ExperimentConfig) -> ExperimentResult:
    """C_k 的均值（0, (2β_n)^k, 2(2β_n)^k）与方差 2k；零假设下另做 Wick 联合矩"""
    result = ExperimentResult("cycles")
    h = config.config_hash()
    measure = config.measure
    factor = {"null": 0.0, "planted": 1.0, "pair": 2.0}[measure]
    se_mult = config.se_mult or 3.0
    var_band = config.var_band or 0.15
    for n in config.n:
        params = config.params_for(n)
        beta_n = discrete_constants(params.kappa, n, params.m).beta_n
        logger.info("cycles: measure=%s n=%d m=%d beta_n=%.6g", measure, n, params.m, beta_n)
        records = _run(_cycles_replica, [(config, h, n, r) for r in range(config.replicas)],
                       config, f"cycles {measure} n={n}", result)
        tag = f"[{measure},n={n}]"
        batches = {}
        for k in range(2, config.m1 + 1):
            values = [r[f"c{k}"] for r in records]
            batches[k] = values
            target_var = 2.0 * k if (measure == "null" and n >= 200 and k <= 3) else None
            result.verdicts.append(_moment_verdict(
                values, factor * (2.0 * beta_n) ** k, target_var, name=f"c{k}_moments{tag}",
                se_mult=se_mult, var_band=var_band, hard=(measure == "null" or k == 2)))

        if measure == "null" and config.replicas >= 2:
            result.verdicts.append(wick_joint_moments(batches, config.max_degree, name=f"wick{tag}"))

        beta_used = _beta_for(config, params)
        y_mean, y_var = y_limit_law(beta_used, config.m1, measure)
        result.verdicts.append(_moment_verdict(
            [r["Y"] for r in records], y_mean, y_var if y_var > 0 else None,
            name=f"y_limit_law{tag}", se_mult=se_mult, var_band=0.25, hard=False))
        result.report[f"cycles{tag}"] = {
            "beta_n": beta_n,
            "beta_used": beta_used,
            "y_limit": [y_mean, y_var],
            "truncation_bias_bound": truncation_bias_bound(beta_used, config.m1) if abs(beta_used) < 0.5 else None,
        }

        if measure == "planted" and config.rows:
            rng = replica_rng(config.seed, _stream("rows", n), 0)
            for order in (2, 3):
                est = planted_row_correlation(params, rng, config.rows, order=order)
                result.verdicts.append(_correlation_verdict(est, f"planted_row_order{order}[n={n}]", se_mult))
                result.report[f"planted_row_order{order}[n={n}]"] = {
                    "mean": est.mean, "se": est.se, "target": est.target, "leading": est.leading,
                    "z_target": est.z_score, "z_leading": est.z_leading, "rows": est.count}
    return result


def exp_convinp(config: ExperimentConfig) -> ExperimentResult:
    """成对的 (log(Z/E[Z]), Y_{M1})：残差方差比例、按 M1 的单调性、E[(Z/EZ)e^{−Y}] ≈ 1"""
    result = ExperimentResult("convinp")
    h = config.config_hash()
    for n in config.n:
        params = config.params_for(n)
        beta_used = _beta_for(config, params)
        records = _run(_count_replica, [(config, h, n, r) for r in range(config.replicas)],
                       config, f"convinp n={n}", result)
        tag = f"[n={n}]"
        if abs(beta_used) < NO_SIGNAL_BETA:
            result.verdicts.append(degenerate_verdict(f"variance_reduction{tag}", "no-signal regime (beta ~ 0)"))
            result.report[f"convinp{tag}"] = {"beta_used": beta_used, "regime": "no-signal"}
            continue

        solvable = [r for r in records if r["log_ratio"] is not None]
        lr = np.array([r["log_ratio"] for r in solvable])
        fractions: Dict[int, float] = {}
        for m1 in range(2, config.m1 + 1):
            y = np.array([correction_from_stats(_stats_from_record(r, config.m1), beta_used, m1).y
                          for r in solvable])
            if lr.size < 2:
                break
            v = variance_reduction(lr, y, config.max_fraction, name=f"variance_reduction_m1={m1}{tag}",
                                   hard=(m1 == config.m1))
            fractions[m1] = v.statistic
            result.verdicts.append(v)

        f2, fm = fractions.get(2, math.nan), fractions.get(config.m1, math.nan)
        if config.m1 > 2 and math.isfinite(f2) and math.isfinite(fm):
            result.verdicts.append(TestVerdict(
                name=f"residual_nonincreasing{tag}", statistic=fm - f2, threshold=0.01,
                p_value_or_band=0.01, passed=fm <= f2 + 0.01,
                details=f"residual fraction M1=2: {f2:.4g}, M1={config.m1}: {fm:.4g}"))

        # E[(Z/EZ)·e^{−Y}] = E*[e^{−Y}] → 1
        ratios = np.array([r["ratio"] for r in records])
        ys = np.array([r["Y"] for r in records])
        weighted = ratios * np.exp(-ys)
        mean_w = float(weighted.mean())
        se_w = float(weighted.std(ddof=1) / math.sqrt(weighted.size)) if weighted.size > 1 else math.inf
        z = (mean_w - 1.0) / se_w if se_w > 0 else 0.0
        result.verdicts.append(_soft(f"tilted_mean{tag}", abs(z) <= 3.0, z, 3.0,
                                     f"mean((Z/EZ)e^-Y)={mean_w:.6g}±{se_w:.3g}"))
        result.report[f"convinp{tag}"] = {
            "beta_used": beta_used,
            "beta_convention": config.beta_convention,
            "residual_fraction": {str(k): v for k, v in fractions.items()},
            "mean_ratio_exp_neg_y": mean_w,
            "mean_exp_neg_y": float(np.exp(-ys).mean()),
            "zero_count": len(records) - len(solvable),
        }
    return result


def _crossing(alphas: Sequence[float], probs: Sequence[float]) -> Optional[float]:
    """P(Z ≥ 1) 首次从 ≥ 1/2 跌到 < 1/2 处的线性插值"""
    pts = sorted(zip(alphas, probs))
    for (a0, p0), (a1, p1) in zip(pts, pts[1:]):
        if p0 >= 0.5 > p1:
            return a0 + (p0 - 0.5) * (a1 - a0) / (p0 - p1)
    return None


def exp_threshold(config: ExperimentConfig) -> ExperimentResult:
    """按 (n, α) 估计 P(Z ≥ 1)，检查一阶矩上界并报告 α̂(n)"""
    result = ExperimentResult("threshold")
    h = config.config_hash()
    ac = alpha_c(config.kappa)
    curves: Dict[int, Tuple[List[float], List[float]]] = {n: ([], []) for n in config.n}
    for point, alpha in enumerate(config.alpha_points_abs()):
        for n in config.n:
            params = config.params_for(n, alpha)
            records = _run(_threshold_replica,
                           [(config, h, n, point, alpha, r) for r in range(config.replicas)],
                           config, f"threshold n={n} alpha={params.alpha:.4g}", result)
            hits = sum(1 for r in records if r["satisfiable"])
            p, lo, hi = proportion_estimate(hits, len(records))
            bound = min(1.0, math.exp(min(0.0, expected_Z(params))))
            se = math.sqrt(p * (1 - p) / len(records))
            tag = f"[n={n},alpha={params.alpha:.6g}]"
            result.verdicts.append(TestVerdict(
                name=f"first_moment_bound{tag}", statistic=p, threshold=bound + 3 * se,
                p_value_or_band=se, passed=p <= bound + 3 * se,
                details=f"P(Z>=1)={p:.4g} [{lo:.4g}, {hi:.4g}] bound={bound:.4g}"))
            if alpha is not None and alpha <= 0.5 * ac + 1e-12:
                result.verdicts.append(TestVerdict(
                    name=f"low_density_solvable{tag}", statistic=p, threshold=0.95,
                    p_value_or_band=se, passed=p >= 0.95,
                    details=f"alpha/alpha_c={params.alpha / ac:.4g}"))
            curves[n][0].append(params.alpha)
            curves[n][1].append(p)
            result.report[f"threshold{tag}"] = {"p": p, "ci": [lo, hi], "first_moment_bound": bound}

    crossings = {n: _crossing(*curves[n]) for n in config.n}
    result.report["crossing"] = {str(n): c for n, c in crossings.items()}
    result.report["alpha_c"] = ac
    found = [(n, c) for n, c in sorted(crossings.items()) if c is not None]
    if len(found) >= 2:
        first, last = found[0][1], found[-1][1]
        result.verdicts.append(_soft(
            "crossing_trend", abs(last - ac) <= abs(first - ac), abs(last - ac), abs(first - ac),
            f"alpha_hat: {', '.join(f'n={n}: {c:.4g}' for n, c in found)}; alpha_c={ac:.6g}"))
    return result


def exp_freezing(config: ExperimentConfig) -> ExperimentResult:
    """均匀解的孤立性：每个 d 报告半径 ⌈d·n⌉ 内无其它解的频率（只报告，不判定）"""
    result = ExperimentResult("freezing")
    h = config.config_hash()
    list_max = get_settings().enumeration.list_max_n
    for n in config.n:
        if n > list_max:
            raise CapabilityError(f"freezing needs uniform solution sampling, n <= {list_max} (got {n})")
    for point, alpha in enumerate(config.alpha_points_abs()):
        for n in config.n:
            params = config.params_for(n, alpha)
            records = _run(_freezing_replica,
                           [(config, h, n, point, alpha, r) for r in range(config.replicas)],
                           config, f"freezing n={n} alpha={params.alpha:.4g}", result)
            kept = [r for r in records if not r["skipped"]]
            tag = f"[n={n},alpha={params.alpha:.6g}]"
            skipped = len(records) - len(kept)
            if skipped:
                logger.warning("freezing %s: %d replicas skipped (no solutions after retries)", tag, skipped)
            if not kept:
                result.verdicts.append(degenerate_verdict(f"freezing{tag}", "every replica was skipped"))
                continue
            hist = Counter("none" if r["nearest"] is None else str(r["nearest"]) for r in kept)
            isolation = {}
            for d, radius in _freezing_radii(config, n):
                isolated = sum(1 for r in kept if r["nearest"] is None or r["nearest"] > radius)
                p, lo, hi = proportion_estimate(isolated, len(kept))
                isolation[format(d, ".6g")] = {"radius": radius, "frequency": p, "ci": [lo, hi]}
            result.report[f"freezing{tag}"] = {
                "histogram": dict(sorted(hist.items())),
                "isolation": isolation,
                "skipped": skipped,
            }
    return result


def exp_contiguity(config: ExperimentConfig) -> ExperimentResult:
    """P 与 P* 下同一事件的概率估计；探索性，只有恒等式类判定是 hard"""
    result = ExperimentResult("contiguity")
    h = config.config_hash()
    result.report["exploratory"] = True
    for n in config.n:
        params = config.params_for(n)
        estimates = {}
        for measure in ("null", "planted"):
            records = _run(_contiguity_replica, [(config, h, n, measure, r) for r in range(config.replicas)],
                           config, f"contiguity {measure} n={n}", result)
            hits = sum(1 for r in records if r["event"])
            estimates[measure] = proportion_estimate(hits, len(records))

        tag = f"[{config.event},n={n}]"
        entry: Dict[str, Any] = {m: {"p": e[0], "ci": [e[1], e[2]]} for m, e in estimates.items()}
        if config.event == "ratio_below":
            beta_used = _beta_for(config, params)
            if 0 < abs(beta_used) < 0.5:
                mu, sigma2 = lognormal_params_from_beta(beta_used)
                sigma = math.sqrt(sigma2)
                log_tau = math.log(config.tau)
                # P* 按 Z/E[Z] 重新加权：log 比值的均值平移 σ²
                targets = {"null": float(special.ndtr((log_tau - mu) / sigma)),
                           "planted": float(special.ndtr((log_tau - mu - sigma2) / sigma))}
                for measure, target in targets.items():
                    p, lo, hi = estimates[measure]
                    result.verdicts.append(_soft(
                        f"lognormal_tail_{measure}{tag}", lo <= target <= hi, p, target,
                        f"P={p:.4g} [{lo:.4g}, {hi:.4g}] target={target:.4g}"))
                    entry[measure]["target"] = target
        elif config.event == "z_zero":
            p = estimates["planted"][0]
            result.verdicts.append(TestVerdict(
                name=f"planted_solvable{tag}", statistic=p, threshold=0.0, p_value_or_band=0.0,
                passed=p == 0.0, details="planted instances always contain the planted solution"))
        elif config.event == "always":
            both = estimates["null"][0] == 1.0 and estimates["planted"][0] == 1.0
            result.verdicts.append(_soft(f"always{tag}", both, estimates["null"][0], 1.0, "trivial event"))
        result.report[f"contiguity{tag}"] = entry
    return result


def _default_kappa_grid() -> List[str]:
    return [format(k, ".6g") for k in np.linspace(0.3, 3.0, 10)]


def exp_hypothesis(config: ExperimentConfig) -> ExperimentResult:
    """(κ, α) 网格上的 F' 根数报告；偏离单根的点记为发现"""
    result = ExperimentResult("hypothesis")
    h = config.config_hash()
    payloads = []
    for kappa in config.kappa_grid or _default_kappa_grid():
        ac = alpha_c(kappa)
        top = config.alpha_max_fraction * ac
        for i in range(config.alpha_points):
            alpha = top * (i + 1) / config.alpha_points
            payloads.append((config, h, len(payloads), kappa, alpha))
    records = _run(_hypothesis_task, payloads, config, "hypothesis", result)
    deviations = [r for r in records if r["deviation"]]
    for r in deviations:
        logger.warning("finding: kappa=%s alpha=%.6g has %d roots with F''(1/2) < 0",
                       r["kappa"], r["alpha"], r["root_count"])
    negative = sum(1 for r in records if r["f2_half_negative"])
    result.verdicts.append(_soft(
        "hypothesis1_single_root", not deviations, float(len(deviations)), 0.0,
        f"{len(records)} grid points, {negative} with F''(1/2) < 0, {len(deviations)} deviations"))
    result.report["hypothesis"] = {"grid_points": len(records), "f2_half_negative": negative,
                                   "deviations": [[r["kappa"], r["alpha"]] for r in deviations]}
    return result


def exp_second_moment(config: ExperimentConfig) -> ExperimentResult:
    """
    E[Z²]/E[Z]² 沿 n 列表逼近 exp(−2β_n²)/√(1−4β_n²)。

    hard 判定用奇偶平滑后的比值；精确比值带不衰减的格点因子，只做 soft 报告。
    """
    result = ExperimentResult("second_moment")
    h = config.config_hash()
    smoothed_errors: List[Tuple[int, float]] = []
    exact_errors: List[Tuple[int, float]] = []
    for n in sorted(config.n):
        params = config.params_for(n)
        beta_n = _beta_for(config, params) if params.m else 0.0
        ratio = second_moment_ratio(params)
        smoothed = second_moment_ratio(params, smoothed=True)
        limit = second_moment_limit(beta_n)
        rel = abs(smoothed - limit) / limit
        rel_exact = abs(ratio - limit) / limit
        smoothed_errors.append((n, rel))
        exact_errors.append((n, rel_exact))
        fields = {"n": n, "m": params.m, "beta_n": beta_n, "second_moment_ratio": ratio,
                  "second_moment_ratio_smoothed": smoothed, "lattice_factor": ratio / smoothed,
                  "second_moment_limit": limit, "relative_error": rel, "relative_error_exact": rel_exact}
        result.records.append(ExperimentRecord(h, n, config.seed, fields).to_dict())
    if not smoothed_errors:
        return result
    n_last, rel_last = smoothed_errors[-1]
    result.verdicts.append(TestVerdict(
        name=f"second_moment_limit[n={n_last}]", statistic=rel_last, threshold=0.05,
        p_value_or_band=0.05, passed=rel_last < 0.05,
        details=f"parity-smoothed relative error {rel_last:.4g} at the largest n"))
    exact_last = exact_errors[-1][1]
    result.verdicts.append(_soft(
        f"second_moment_exact_limit[n={n_last}]", exact_last < 0.05, exact_last, 0.05,
        f"exact ratio relative error {exact_last:.4g}, lattice factor "
        f"{result.records[-1]['lattice_factor']:.6g}"))
    if len(smoothed_errors) >= 2:
        decreasing = all(b[1] < a[1] for a, b in zip(smoothed_errors, smoothed_errors[1:]))
        result.verdicts.append(TestVerdict(
            name="second_moment_monotone", statistic=float(decreasing), threshold=1.0,
            p_value_or_band=math.nan, passed=decreasing,
            details=", ".join(f"n={n}: {e:.4g}" for n, e in smoothed_errors)))
        exact_decreasing = all(b[1] < a[1] for a, b in zip(exact_errors, exact_errors[1:]))
        result.verdicts.append(_soft(
            "second_moment_exact_monotone", exact_decreasing, float(exact_decreasing), 1.0,
            ", ".join(f"n={n}: {e:.4g}" for n, e in exact_errors)))
    return result


def exp_constants(config: ExperimentConfig) -> ExperimentResult:
    """理论常数与离散常数对照表，并附二阶矩比"""
    result = ExperimentResult("constants")
    h = config.config_hash()
    for n in config.n:
        params = config.params_for(n)
        tc = theory_constants(params.kappa, config.resolve_alpha(config.alpha) if config.alpha is not None
                              else params.alpha)
        fields: Dict[str, Any] = {"n": n, "m": params.m, "kind": "constants",
                                  "p_kappa": tc.p_kappa, "mu2_kappa": tc.mu2_kappa, "beta": tc.beta,
                                  "alpha_c": tc.alpha_c, "lognormal_mu": tc.lognormal_mu,
                                  "lognormal_sigma2": tc.lognormal_sigma2, "log_EZ": expected_Z(params)}
        if params.m >= 1:
            dc = discrete_constants(params.kappa, n, params.m)
            fields.update({"band": dc.band, "p_kappa_n": dc.p_kappa_n, "mu2_kappa_n": dc.mu2_kappa_n,
                           "beta_n": dc.beta_n})
        result.records.append(ExperimentRecord(h, n, config.seed, fields).to_dict())
    result.extend(exp_second_moment(config))
    return result


EXPERIMENTS: Dict[str, Callable[[ExperimentConfig], ExperimentResult]] = {
    "lognormal": exp_lognormal,
    "cycles": exp_cycle_normality,
    "convinp": exp_convinp,
    "threshold": exp_threshold,
    "freezing": exp_freezing,
    "contiguity": exp_contiguity,
    "hypothesis": exp_hypothesis,
    "constants": exp_constants,
}


# ─────────────────────────── 入口 ───────────────────────────────────


def run(
    config: Union[str, Path, ExperimentConfig],
    *,
    experiment: Optional[str] = None,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    out: Optional[str] = None,
    fmt: Optional[str] = None,
) -> RunOutcome:
    """
    加载配置、执行实验、落盘。exit_status = 0 当且仅当所有 hard 判定通过，否则 1。
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_experiment_config(config)
    if experiment is not None and cfg.experiment != experiment:
        raise ConfigError(f"config describes experiment '{cfg.experiment}', not '{experiment}'")
    cfg = cfg.with_overrides(seed=seed, workers=workers, out=out, format=fmt)

    sink = RecordSink(cfg.out, cfg.format)
    started = time.perf_counter()
    try:
        result = EXPERIMENTS[cfg.experiment](cfg)
        sink.write_records(result.records)
        for t in result.timings:
            sink.write_timing(t["replica"], t["seconds"], task=t["task"], index=t["index"])
        for v in result.verdicts:
            sink.write_verdict(v)
        failed = [v for v in result.verdicts if v.hard and not v.passed]
        exit_status = 1 if failed else 0
        sink.write_meta({
            "experiment": cfg.experiment,
            "config_hash": cfg.config_hash(),
            "config": cfg.model_dump(),
            "versions": {
                "sbp_lab": get_settings().app.version,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "workers": cfg.workers,
            "wall_time_sec": time.perf_counter() - started,
            "exit_status": exit_status,
            "report": result.report,
        })
    finally:
        sink.close()
    logger.info("%s finished: %d records, %d verdicts, exit %d",
                cfg.experiment, len(result.records), len(result.verdicts), exit_status)
    return RunOutcome(exit_status=exit_status, result=result, out_dir=Path(cfg.out), config=cfg)
