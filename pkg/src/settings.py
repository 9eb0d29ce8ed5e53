"""
实验室全局配置（config.yaml）

config.yaml 只放跨实验的默认值与容量上限；单次实验的参数在 configs/*.yaml。
环境变量可以覆盖少数字段：SBP_LAB_LOG_LEVEL / SBP_LAB_WORKERS / SBP_LAB_N_MAX。
"""

import os
from functools import lru_cache
from pathlib import Path
from typing import Optional

import yaml
from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigError

ROOT_DIR = Path(__file__).resolve().parent.parent
DEFAULT_CONFIG_PATH = ROOT_DIR / "config.yaml"


class AppSection(BaseModel):
    name: str = "SBP Lab"
    version: str = "1.0.0"


class EnumerationSection(BaseModel):
    n_max: int = Field(default=30, ge=1, le=40)
    list_max_n: int = Field(default=24, ge=1)
    list_max_count: int = Field(default=1_000_000, ge=0)
    block_bits: int = Field(default=14, ge=1, le=20)


class CyclesSection(BaseModel):
    k_fast: int = Field(default=4, ge=2, le=6)


class PlantedSection(BaseModel):
    rejection_budget: int = Field(default=1_000_000, ge=1)


class HarnessSection(BaseModel):
    default_workers: int = Field(default=1, ge=1)
    freezing_retry_budget: int = Field(default=50, ge=1)
    flip_search_budget: int = Field(default=5_000_000, ge=1)


class LoggingSection(BaseModel):
    level: str = "INFO"


class LabSettings(BaseModel):
    app: AppSection = Field(default_factory=AppSection)
    enumeration: EnumerationSection = Field(default_factory=EnumerationSection)
    cycles: CyclesSection = Field(default_factory=CyclesSection)
    planted: PlantedSection = Field(default_factory=PlantedSection)
    harness: HarnessSection = Field(default_factory=HarnessSection)
    logging: LoggingSection = Field(default_factory=LoggingSection)


def _apply_env_overrides(data: dict) -> dict:
    level = os.getenv("SBP_LAB_LOG_LEVEL")
    if level:
        data.setdefault("logging", {})["level"] = level
    workers = os.getenv("SBP_LAB_WORKERS")
    if workers:
        data.setdefault("harness", {})["default_workers"] = int(workers)
    n_max = os.getenv("SBP_LAB_N_MAX")
    if n_max:
        data.setdefault("enumeration", {})["n_max"] = int(n_max)
    return data


def load_settings(config_path: Optional[str] = None) -> LabSettings:
    path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
    data = {}
    if path.exists():
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: lab settings must be a mapping")
    try:
        return LabSettings(**_apply_env_overrides(data))
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


@lru_cache(maxsize=1)
def get_settings() -> LabSettings:
    """进程内共享的默认配置（首次调用时读取 config.yaml）"""
    return load_settings()
