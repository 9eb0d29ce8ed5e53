"""
实验配置（configs/*.yaml）

扁平 YAML：每行一个键，列表写成行内形式。
校验失败统一抛 ConfigError，消息里带上出错字段所在的行号。

用法：
    cfg = load_experiment_config("configs/lognormal.yaml")
    cfg = cfg.with_overrides(seed=7, workers=8)
    cfg.config_hash()
"""

import hashlib
import json
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError, SBPLabError
from .model import ModelParams, agreements_from_t
from .seeding import U64_MAX
from .theory import alpha_c, exact_kappa

ExperimentName = Literal[
    "lognormal", "cycles", "convinp", "threshold", "freezing", "contiguity", "hypothesis", "constants"
]

# 要求 α < α_c 的实验
SUBCRITICAL_EXPERIMENTS = ("lognormal", "cycles", "convinp", "contiguity", "constants")

DEFAULT_DISTANCES = [0.02, 0.05, 0.1, 0.2]

# 只影响执行方式、不影响结果的字段，不计入配置哈希
EXECUTION_FIELDS = ("workers", "out", "format")


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentName
    kappa: str = Field(default="1", description="十进制字符串，按字面精确解析")
    alpha: Optional[float] = Field(default=None, ge=0)
    m: Optional[int] = Field(default=None, ge=0)
    n: List[int] = Field(default_factory=lambda: [24])
    replicas: int = Field(default=100, ge=1)
    m1: int = Field(default=4, ge=2)
    seed: int = Field(default=0, ge=0, le=U64_MAX)
    workers: int = Field(default=1, ge=1)
    out: str = "output/run"
    format: Literal["jsonl", "csv"] = "jsonl"

    # cycles
    measure: Literal["null", "planted", "pair"] = "null"
    t: float = 0.0
    rows: Optional[int] = Field(default=None, ge=2)
    max_degree: int = Field(default=4, ge=1)

    # 阈值 / 冻结：α 网格，alpha_relative=true 时按 α_c 的倍数解释
    alpha_grid: Optional[List[float]] = None
    alpha_relative: bool = False
    distances: List[float] = Field(default_factory=lambda: list(DEFAULT_DISTANCES))

    # contiguity
    event: Literal["ratio_below", "z_zero", "c2_above", "always"] = "ratio_below"
    tau: float = Field(default=math.exp(-3.0), gt=0)
    c2_threshold: float = 0.0

    # convinp
    beta_convention: Literal["beta_n", "beta"] = "beta_n"
    max_fraction: float = Field(default=0.35, gt=0)

    # 判定阈值（None 时用各实验的默认值）
    se_mult: Optional[float] = Field(default=None, gt=0)
    var_band: Optional[float] = Field(default=None, gt=0)

    # hypothesis
    kappa_grid: Optional[List[str]] = None
    alpha_points: int = Field(default=10, ge=1)
    alpha_max_fraction: float = Field(default=0.95, gt=0, le=1)
    grid_points: int = Field(default=2048, ge=8)

    @field_validator("kappa", mode="before")
    @classmethod
    def _kappa_decimal(cls, v):
        v = str(v).strip()
        exact_kappa(v)
        return v

    @field_validator("kappa_grid", mode="before")
    @classmethod
    def _kappa_grid_decimal(cls, v):
        if v is None:
            return v
        out = [str(x).strip() for x in v]
        for x in out:
            exact_kappa(x)
        return out

    @field_validator("n", mode="before")
    @classmethod
    def _n_list(cls, v):
        values = [v] if isinstance(v, int) else list(v)
        if not values or any(int(x) < 1 for x in values):
            raise ValueError("n must be a positive integer or a non-empty list of them")
        return values

    @field_validator("distances")
    @classmethod
    def _distances_range(cls, v):
        if any(not 0 <= d <= 1 for d in v):
            raise ValueError("distances must lie in [0, 1]")
        return v

    # ── 派生量 ──────────────────────────────────────────────

    def resolve_alpha(self, value: float) -> float:
        return value * alpha_c(self.kappa) if self.alpha_relative else value

    def alpha_points_abs(self) -> List[Optional[float]]:
        """阈值/冻结实验的 α 列表；只给了 m 时返回 [None]"""
        if self.alpha_grid:
            return [self.resolve_alpha(a) for a in self.alpha_grid]
        if self.alpha is not None:
            return [self.resolve_alpha(self.alpha)]
        return [None]

    def params_for(self, n: int, alpha: Optional[float] = None) -> ModelParams:
        if alpha is None and self.m is not None:
            return ModelParams(kappa=self.kappa, n=n, m=self.m, seed=self.seed)
        a = alpha if alpha is not None else self.resolve_alpha(self.alpha)
        return ModelParams.from_alpha(self.kappa, a, n, seed=self.seed)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return validate_experiment_config(data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(), sort_keys=False, default_flow_style=None,
                              allow_unicode=True)

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(exclude=set(EXECUTION_FIELDS)), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ─────────────────────────── 加载与校验 ─────────────────────────────


def _key_lines(text: str) -> Dict[str, int]:
    """顶层键 → 行号（1 起）"""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value}


def _where(source: str, lines: Dict[str, int], field: Optional[str]) -> str:
    if field and field in lines:
        return f"{source}:{lines[field]}: field '{field}'"
    if field:
        return f"{source}: field '{field}'"
    return source


def _check_semantics(cfg: ExperimentConfig) -> None:
    """跨字段约束；抛 (字段, 消息)"""
    if cfg.alpha is not None and cfg.m is not None:
        raise _FieldError("m", "give either alpha or m, not both")
    needs_density = cfg.experiment not in ("hypothesis",)
    if needs_density and cfg.alpha is None and cfg.m is None and not cfg.alpha_grid:
        raise _FieldError("alpha", f"experiment '{cfg.experiment}' needs alpha, m or alpha_grid")
    if cfg.experiment == "threshold" and not cfg.alpha_grid:
        raise _FieldError("alpha_grid", "threshold experiment needs alpha_grid")
    if cfg.experiment in SUBCRITICAL_EXPERIMENTS:
        ac = alpha_c(cfg.kappa)
        for n in cfg.n:
            params = cfg.params_for(n) if cfg.alpha is not None or cfg.m is not None else None
            if params is not None and params.m > 0 and params.alpha >= ac:
                field = "m" if cfg.m is not None else "alpha"
                raise _FieldError(field, f"alpha = m/n = {params.alpha:.6g} is not below alpha_c = {ac:.6g} (n={n})")
    if cfg.experiment == "cycles" and cfg.measure == "pair":
        for n in cfg.n:
            try:
                agreements_from_t(n, cfg.t)
            except SBPLabError as e:
                raise _FieldError("t", str(e)) from e


class _FieldError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field
        self.message = message


def validate_experiment_config(
    data: dict,
    *,
    source: str = "<config>",
    lines: Optional[Dict[str, int]] = None,
) -> ExperimentConfig:
    lines = lines or {}
    try:
        cfg = ExperimentConfig(**data)
    except ValidationError as e:
        err = e.errors()[0]
        field = str(err["loc"][0]) if err.get("loc") else None
        raise ConfigError(f"{_where(source, lines, field)}: {err['msg']}") from e
    except SBPLabError as e:
        raise ConfigError(f"{source}: {e}") from e
    try:
        _check_semantics(cfg)
    except _FieldError as e:
        raise ConfigError(f"{_where(source, lines, e.field)}: {e.message}") from e
    return cfg


def parse_experiment_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: experiment config must be a key/value mapping")
    return validate_experiment_config(data, source=source, lines=_key_lines(text))


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """读取并校验实验配置；文件读不到时 OSError 原样抛出"""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return parse_experiment_config(text, source=str(path))
