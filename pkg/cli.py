#!/usr/bin/env python3
"""
SBP Lab 实验 CLI（对称二元感知机）

用法:
  python cli.py lognormal  --config configs/lognormal.yaml
  python cli.py cycles     --config configs/cycles_null.yaml --workers 8
  python cli.py convinp    --config configs/convinp.yaml --seed 7
  python cli.py threshold  --config configs/threshold.yaml --out output/threshold
  python cli.py freezing   --config configs/freezing.yaml
  python cli.py contiguity --config configs/contiguity.yaml --format csv
  python cli.py hypothesis --config configs/hypothesis.yaml
  python cli.py constants  --config configs/constants.yaml

退出码:
  0  全部 hard 判定通过
  1  有 hard 判定失败
  2  配置错误（行号 + 字段）
  3  文件读写错误
  4  其它实验错误（容量上限、采样预算等）
"""

import argparse
import logging
import os
import sys

from dotenv import load_dotenv

# 添加 src 到路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.errors import ConfigError, SBPLabError
from src.experiments import EXPERIMENTS, RunOutcome, run
from src.settings import get_settings

EXIT_OK = 0
EXIT_VERDICT_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_LAB = 4


RULE = "─" * 60


def announce_outcome(outcome: RunOutcome) -> int:
    """hard 判定总结框：未通过的逐个列出；返回退出码"""
    hard = [v for v in outcome.result.verdicts if v.hard]
    failed = outcome.failed_hard
    if outcome.exit_status != EXIT_OK:
        head = f"⛔ {len(failed)} 个 hard 判定未通过（共 {len(hard)} 个）"
        code = EXIT_VERDICT_FAILED
    else:
        head = f"🎉 全部 hard 判定通过（共 {len(hard)} 个）"
        code = EXIT_OK
    print("\n".join(["", RULE, head, *(f"   - {v.name}" for v in failed), RULE]))
    return code


def print_summary(outcome: RunOutcome):
    verdicts = outcome.result.verdicts
    print(f"\n📊 {outcome.config.experiment} 结果")
    print(f"  配置哈希: {outcome.config.config_hash()[:16]}")
    print(f"  记录数: {len(outcome.result.records)}")
    print(f"  判定数: {len(verdicts)}（hard {sum(1 for v in verdicts if v.hard)}）")
    for v in verdicts:
        if v.passed:
            mark = "✅"
        elif v.hard:
            mark = "❌"
        else:
            mark = "⚠️ "
        print(f"  {mark} {v.name}: {v.details}")
    print(f"  输出目录: {outcome.out_dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="SBP Lab 实验 CLI",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("experiment", choices=sorted(EXPERIMENTS), help="要运行的实验")
    parser.add_argument("--config", "-c", required=True, help="实验配置 YAML 路径")
    parser.add_argument("--seed", type=int, default=None, help="覆盖配置中的 base seed（u64）")
    parser.add_argument("--workers", "-w", type=int, default=None, help="并行进程数")
    parser.add_argument("--out", "-o", default=None, help="输出目录（不存在时自动创建）")
    parser.add_argument("--format", choices=["jsonl", "csv"], default=None, help="记录文件格式")
    parser.add_argument("--verbose", "-v", action="store_true", help="DEBUG 日志")
    return parser


def main(argv=None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        settings = get_settings()
    except ConfigError as e:
        print(f"❌ 配置错误: {e}", file=sys.stderr)
        return EXIT_CONFIG
    level = "DEBUG" if args.verbose else settings.logging.level.upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    workers = args.workers
    if workers is None and settings.harness.default_workers > 1:
        workers = settings.harness.default_workers

    print(f"\n🧪 SBP Lab  |  实验: {args.experiment}  |  配置: {args.config}  |  seed: "
          f"{args.seed if args.seed is not None else '配置值'}")
    try:
        outcome = run(args.config, experiment=args.experiment, seed=args.seed,
                      workers=workers, out=args.out, fmt=args.format)
    except ConfigError as e:
        print(f"❌ 配置错误: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"❌ 文件读写失败: {e}", file=sys.stderr)
        return EXIT_IO
    except SBPLabError as e:
        print(f"❌ 实验失败: {e}", file=sys.stderr)
        return EXIT_LAB

    print_summary(outcome)
    return announce_outcome(outcome)


if __name__ == "__main__":
    sys.exit(main())
