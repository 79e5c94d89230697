#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Benchmark command line

    python bench.py run --config configs/protonet_5w5s.yaml [--config ...]
    python bench.py eval --ckpt runs/ProtoNet_5w5s_seed0.pt --episodes 600 --seed 0
    python bench.py report --in benchmark_results --format md [--include-reference] [--metric runtime]
    python bench.py list-methods
"""

import os
import sys
import logging
import argparse
from datetime import datetime

# Load environment variables
from dotenv import load_dotenv
load_dotenv()

from fewsar_benchmark import FewSARBenchmark, load_results_dir, load_run_config
from methods.registry import METHOD_REGISTRY
from utils.errors import FewSARError
from utils.report_writer import FORMATS, METRICS, BenchmarkReporter
from utils.result_formatters import format_percentage

# Configure logging
logging.basicConfig(
    level=os.getenv('FEWSAR_LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def cmd_run(args) -> int:
    configs = [load_run_config(path) for path in args.config]
    benchmark = FewSARBenchmark(results_folder=args.results_dir)
    benchmark.run_full_benchmark(configs, save_results=True)
    for result in benchmark.results:
        print(f"✅ {result.method:<12} {result.setting}: {result.accuracy:.2f} ± {result.ci:.2f}% "
              f"({result.runtime_minutes:.3f} min/epoch, digest {result.config_digest})")
    for failure in benchmark.failures:
        print(f"❌ {failure['method']}: {failure['error']}")
    return 1 if benchmark.failures else 0


def cmd_eval(args) -> int:
    benchmark = FewSARBenchmark(results_folder=args.results_dir)
    result = benchmark.evaluate_checkpoint(args.ckpt, n_episodes=args.episodes, seed=args.seed)
    benchmark.save_results_to_file()
    print(f"✅ {result.method} {result.setting}: {result.accuracy:.2f} ± {result.ci:.2f}% "
          f"over {result.n_episodes} episodes")
    return 0


def cmd_report(args) -> int:
    results, hardware = load_results_dir(args.in_dir)
    out_path = args.out
    if out_path is None:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        out_path = os.path.join(args.in_dir, f"{args.metric}_table_{timestamp}.{args.format}")
    reporter = BenchmarkReporter(metric=args.metric, include_reference=args.include_reference, hardware=hardware)
    reporter.report(results, args.format, out_path)
    print(f"📄 {len(results)} results -> {out_path}")
    return 0


def cmd_list_methods(args) -> int:
    print("📋 Registered methods")
    print("=" * 60)
    for entry in METHOD_REGISTRY.values():
        status = "✅" if entry.implemented else "⏸️  reserved"
        reference = ""
        if entry.reference_accuracy:
            reference = (f"ref 1-shot {format_percentage(entry.reference_accuracy[1])}, "
                         f"5-shot {format_percentage(entry.reference_accuracy[5])}")
        print(f"{status} {entry.name:<12} {entry.category:<11} {entry.venue:<13} {reference}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='bench', description="Few-shot SAR classification benchmark")
    parser.add_argument('--results-dir', default=None,
                        help="Results folder (default: $FEWSAR_RESULTS_DIR or benchmark_results)")
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help="Train and evaluate one or more configs")
    run.add_argument('--config', action='append', required=True, help="YAML run config (repeatable)")
    run.set_defaults(func=cmd_run)

    evaluate = sub.add_parser('eval', help="Evaluate a checkpoint on its test classes")
    evaluate.add_argument('--ckpt', required=True)
    evaluate.add_argument('--episodes', type=int, default=None)
    evaluate.add_argument('--seed', type=int, default=None)
    evaluate.set_defaults(func=cmd_eval)

    report = sub.add_parser('report', help="Render saved results as a comparison table")
    report.add_argument('--in', dest='in_dir', required=True, help="Folder of results JSON files")
    report.add_argument('--format', choices=FORMATS, default='md')
    report.add_argument('--metric', choices=METRICS, default='accuracy')
    report.add_argument('--include-reference', action='store_true', help="Append published reference rows")
    report.add_argument('--out', default=None)
    report.set_defaults(func=cmd_report)

    methods = sub.add_parser('list-methods', help="Show the method registry")
    methods.set_defaults(func=cmd_list_methods)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FewSARError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"❌ {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
