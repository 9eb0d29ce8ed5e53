"""
实验记录落盘

输出目录结构：
    records.jsonl | records.csv   每个副本一行（确定性字段，重跑逐字节相同）
    verdicts.jsonl                每个判定一行
    summary.csv                   每个判定一行的汇总表
    timings.jsonl                 每个副本的耗时（非确定性，单独存放）
    run-meta.json                 配置哈希、版本、总耗时、报告（原子写入）

浮点数按 17 位有效数字输出；NaN / ±inf 写成 null。
"""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np

from .errors import SchemaError
from .stats import TestVerdict

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SUMMARY_COLUMNS = ["name", "passed", "hard", "statistic", "threshold", "p_value_or_band", "details"]


@dataclass
class ExperimentRecord:
    """单个副本的记录：配置哈希 + 副本号 + 种子 + 实验字段"""
    config_hash: str
    replica: int
    seed: int
    fields: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "schema_version": SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "replica": self.replica,
            "seed": self.seed,
        }
        out.update(self.fields)
        return out


# ─────────────────────────── 序列化 ─────────────────────────────────


def format_float(x: float) -> Optional[str]:
    if not math.isfinite(x):
        return None
    text = format(x, ".17g")
    if all(ch.isdigit() or ch == "-" for ch in text):
        text += ".0"
    return text


def _plain(obj: Any) -> Any:
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def dumps(obj: Any) -> str:
    """紧凑 JSON；浮点数固定 17 位有效数字，键保持插入顺序"""
    obj = _plain(obj)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        text = format_float(obj)
        return "null" if text is None else text
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k), ensure_ascii=False)}:{dumps(v)}"
                              for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _csv_cell(value: Any) -> str:
    value = _plain(value)
    if value is None:
        return ""
    if isinstance(value, float):
        return format_float(value) or ""
    if isinstance(value, (list, tuple, dict)):
        return dumps(value)
    return str(value)


def write_json_atomic(path: Path, data: Any) -> None:
    """原子写入：先写 .tmp 再 os.replace"""
    tmp_file = str(path) + ".tmp"
    with open(tmp_file, "w", encoding="utf-8") as f:
        f.write(dumps(data))
        f.write("\n")
    os.replace(tmp_file, path)


# ─────────────────────────── 写入端 ─────────────────────────────────


class RecordSink:
    """
    只追加的记录写入器。

    用法：
        with RecordSink("output/run", fmt="jsonl") as sink:
            sink.write_record(record)
            sink.write_verdict(verdict)
            sink.write_meta({...})
    """

    def __init__(self, out_dir: Union[str, Path], fmt: str = "jsonl"):
        if fmt not in ("jsonl", "csv"):
            raise ValueError(f"unknown record format {fmt!r}")
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OSError(e.errno, f"cannot create output directory {self.out_dir}: {e.strerror}") from e
        self.fmt = fmt
        self.records_path = self.out_dir / f"records.{fmt}"
        self._records = open(self.records_path, "w", encoding="utf-8", newline="")
        self._verdicts = open(self.out_dir / "verdicts.jsonl", "w", encoding="utf-8")
        self._timings = open(self.out_dir / "timings.jsonl", "w", encoding="utf-8")
        # csv 的列是所有记录字段的并集，关闭时统一写出
        self._csv_rows: List[Dict[str, str]] = []
        self.verdicts: List[TestVerdict] = []
        self.record_count = 0

    def write_record(self, record: Union[ExperimentRecord, Dict[str, Any]]) -> None:
        data = record.to_dict() if isinstance(record, ExperimentRecord) else dict(record)
        data.setdefault("schema_version", SCHEMA_VERSION)
        if self.fmt == "jsonl":
            self._records.write(dumps(data) + "\n")
        else:
            self._csv_rows.append({k: _csv_cell(v) for k, v in data.items()})
        self.record_count += 1

    def _write_csv_records(self) -> None:
        columns: Dict[str, None] = {}
        for row in self._csv_rows:
            columns.update(dict.fromkeys(row))
        writer = csv.DictWriter(self._records, fieldnames=list(columns), restval="", lineterminator="\n")
        writer.writeheader()
        writer.writerows(self._csv_rows)

    def write_records(self, records: Iterable[Union[ExperimentRecord, Dict[str, Any]]]) -> None:
        for r in records:
            self.write_record(r)

    def write_timing(self, replica: int, seconds: float, **extra) -> None:
        self._timings.write(dumps({"replica": replica, "seconds": seconds, **extra}) + "\n")

    def write_verdict(self, verdict: TestVerdict) -> None:
        self.verdicts.append(verdict)
        self._verdicts.write(dumps({"schema_version": SCHEMA_VERSION, **verdict.to_dict()}) + "\n")

    def write_meta(self, meta: Dict[str, Any]) -> None:
        write_json_atomic(self.out_dir / "run-meta.json", meta)

    def _write_summary(self) -> None:
        with open(self.out_dir / "summary.csv", "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(SUMMARY_COLUMNS)
            for v in self.verdicts:
                row = v.to_dict()
                writer.writerow([_csv_cell(row[c]) for c in SUMMARY_COLUMNS])

    def close(self) -> None:
        if self._records.closed:
            return
        if self.fmt == "csv":
            self._write_csv_records()
        self._write_summary()
        for f in (self._records, self._verdicts, self._timings):
            f.close()
        logger.info("wrote %d records and %d verdicts to %s", self.record_count, len(self.verdicts), self.out_dir)

    def __enter__(self) -> "RecordSink":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


# ─────────────────────────── 读取 ───────────────────────────────────


def _check_version(row: Dict[str, Any], path: Path, lineno: int) -> None:
    version = row.get("schema_version")
    try:
        ok = int(version) == SCHEMA_VERSION
    except (TypeError, ValueError):
        ok = False
    if not ok:
        raise SchemaError(f"{path}:{lineno}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")


def load_records(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """读取 records.jsonl / records.csv；遇到未知 schema 版本抛 SchemaError"""
    path = Path(path)
    rows: List[Dict[str, Any]] = []
    with open(path, encoding="utf-8", newline="") as f:
        if path.suffix == ".csv":
            for lineno, row in enumerate(csv.DictReader(f), start=2):
                _check_version(row, path, lineno)
                rows.append(dict(row))
        else:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                _check_version(row, path, lineno)
                rows.append(row)
    return rows
