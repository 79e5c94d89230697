#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Quick tour: a short training run of every implemented method on a small
synthetic dataset, then the accuracy table next to the published numbers.
"""

from fewsar_benchmark import DataConfig, FewSARBenchmark, RunConfig
from methods.registry import implemented_methods
from sar_data.episode_sampler import EpisodeSpec
from utils.report_writer import BenchmarkReporter


def quick_config(method_name, k_shot):
    """Tiny run settings so every method finishes in seconds on a CPU"""
    return RunConfig(
        method=method_name,
        epochs=2,
        episodes_per_epoch=10,
        test_episode_count=20,
        train_episode=EpisodeSpec(n_way=5, k_shot=k_shot, n_query=5),
        test_episode=EpisodeSpec(n_way=5, k_shot=k_shot, n_query=15),
        data=DataConfig(synthetic={'images_per_class': 40}),
    )


def main():
    print("Few-shot SAR Benchmark Examples")
    print()

    configs = [quick_config(name, k_shot) for name in implemented_methods() for k_shot in (1, 5)]
    benchmark = FewSARBenchmark()
    benchmark.verbose = True
    benchmark.run_full_benchmark(configs, save_results=False)

    reporter = BenchmarkReporter(include_reference=True)
    table = reporter.build_table(benchmark.results)
    print()
    print(reporter.render_markdown(table))


if __name__ == "__main__":
    main()
