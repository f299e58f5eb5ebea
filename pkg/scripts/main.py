#!/usr/bin/env python3
"""
主程序 - HRTF 评估批处理命令行

子命令：
    synth       生成球头模型合成数据（bundle + 响应日志 + 清单）
    preprocess  对清单中的集合做对齐、加窗、归一化、去 ITD
    compare     线索比较、空间统计、频率 LSD 聚类检验
    behave      定位实验行为分析

退出码：0 成功，2 输入或配置错误，3 内部错误。
统计结果不显著不是错误。
"""

import argparse
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

# 添加父目录到路径
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.errors import ConfigError, HrtfEvalError  # noqa: E402
from core.processor import BatchProcessor  # noqa: E402
from utils.file import load_config, load_manifest, resolve_config  # noqa: E402


def parse_band(text: str) -> List[float]:
    """'lo:hi' → [lo, hi]（Hz）"""
    try:
        lo, hi = (float(v) for v in text.split(':'))
    except ValueError:
        raise argparse.ArgumentTypeError(f"频带格式应为 lo:hi，实际 {text!r}")
    if lo < 0 or hi <= lo:
        raise argparse.ArgumentTypeError(f"频带必须满足 0 ≤ lo < hi: {text!r}")
    return [lo, hi]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='hrtf-eval', description='HRTF 评估工具')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='配置文件（默认 config/config.yaml）')
    common.add_argument('--out', type=Path, help='输出目录')
    common.add_argument('--seed', type=int, help='随机种子')
    common.add_argument('--jobs', type=int, help='并行进程数')
    common.add_argument('--quiet', action='store_true', help='不打印进度')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('synth', parents=[common], help='生成合成数据')

    pre = sub.add_parser('preprocess', parents=[common], help='预处理')
    pre.add_argument('--manifest', type=Path, required=True)

    cmp_ = sub.add_parser('compare', parents=[common], help='线索比较')
    cmp_.add_argument('--manifest', type=Path, required=True)
    cmp_.add_argument('--grid-step', type=float, help='空间网格步长（度）')
    cmp_.add_argument('--n-perm', type=int, help='聚类置换次数')
    cmp_.add_argument('--band', type=parse_band, help='LSD 频带 lo:hi（Hz）')

    beh = sub.add_parser('behave', parents=[common], help='行为分析')
    beh.add_argument('--manifest', type=Path, help='清单（使用其中的 responses）')
    beh.add_argument('--log', type=Path, help='响应日志（优先于清单）')
    beh.add_argument('--lsd-table', type=Path, help='compare 输出的 lsd_table.csv')
    beh.add_argument('--baseline', help='个体化基线条件名')
    return parser


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """命令行参数 → 配置覆盖项"""
    overrides: Dict[str, Any] = {}
    if args.out is not None:
        overrides.setdefault('output', {})['output_dir'] = str(args.out)
    if args.jobs is not None:
        overrides.setdefault('output', {})['jobs'] = args.jobs
    if args.seed is not None:
        overrides.setdefault('stats', {})['seed'] = args.seed
    if getattr(args, 'grid_step', None) is not None:
        overrides.setdefault('spatial', {})['grid_step_deg'] = args.grid_step
    if getattr(args, 'n_perm', None) is not None:
        overrides.setdefault('stats', {})['n_permutations'] = args.n_perm
    if getattr(args, 'band', None) is not None:
        overrides.setdefault('metrics', {})['freq_band_hz'] = args.band
    return overrides


def run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    manifest = load_manifest(args.manifest) if getattr(args, 'manifest', None) else None
    resolved = resolve_config(config, manifest.analysis if manifest else None, cli_overrides(args))
    processor = BatchProcessor(resolved, quiet=args.quiet)

    if args.command == 'synth':
        return processor.synth()
    if args.command == 'preprocess':
        return processor.preprocess(manifest)
    if args.command == 'compare':
        return processor.compare(manifest)

    log_path: Optional[Path] = args.log or (manifest.responses if manifest else None)
    if log_path is None:
        raise ConfigError("behave 需要 --log 或带 responses 的 --manifest")
    baseline = args.baseline or (manifest.reference_label if manifest else None)
    return processor.behave(log_path, args.lsd_table, baseline)


def main(argv: Optional[List[str]] = None) -> int:
    """主流程"""
    args = build_parser().parse_args(argv)
    start_time = datetime.now()

    if not args.quiet:
        print("=" * 70)
        print(f"🎯 HRTF 评估工具 - {args.command}")
        print("=" * 70)

    try:
        code = run(args)
    except HrtfEvalError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        print(f"❌ 内部错误: {type(e).__name__}: {e}", file=sys.stderr)
        return 3

    if not args.quiet:
        elapsed = (datetime.now() - start_time).total_seconds()
        print(f"\n{'='*70}")
        print(f"{'✅ 完成' if code == 0 else '⚠️  完成（有错误）'}，耗时 {elapsed:.1f} 秒")
        print(f"{'='*70}")
    return code


if __name__ == "__main__":
    sys.exit(main())
