#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import os
import re
import json
import time
import logging
from datetime import datetime
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import yaml
from tqdm import tqdm

from methods.base import FewShotMethod
from methods.registry import canonical_name, create_method, get_method
from models.checkpoint import load_checkpoint, save_checkpoint
from models.conv64f import Conv64FConfig
from sar_data.chips import ImageChip, SARDataset, load_dataset
from sar_data.episode_sampler import (
    DatasetSplit,
    EpisodeBatch,
    EpisodeSampler,
    EpisodeSpec,
    load_split_manifest,
    make_split,
    split_dataset,
)
from sar_data.synthetic_sar import SynthConfig, generate_synthetic
from utils.errors import ConfigurationError, DivergedTrainingError, FewSARError
from utils.experiment_helpers import (
    config_digest,
    configure_torch_from_env,
    hardware_descriptor,
    seed_everything,
    summarize_accuracies,
)
from utils.result_formatters import (
    format_accuracy_with_ci,
    format_hardware,
    format_minutes,
    format_setting_label,
)

logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = 50
DEFAULT_EPISODES_PER_EPOCH = 200
DEFAULT_TEST_EPISODES = 600
DEFAULT_LR = 0.001

RUN_KEYS = {'epochs', 'episodes_per_epoch', 'test_episode_count', 'seed', 'lr',
            'train_episode', 'test_episode', 'output_dir'}
METHOD_KEYS = {'name', 'pooling', 'hparams'}
DATA_KEYS = {'root', 'synthetic', 'split_seed', 'split_manifest'}
EPISODE_KEYS = {'n_way', 'k_shot', 'n_query'}


def _reject_unknown(section: str, payload: Mapping, allowed: set) -> None:
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in '{section}': {unknown}. Allowed: {sorted(allowed)}")


@dataclass
class DataConfig:
    """Where chips come from: a dataset directory or the synthetic generator"""
    root: Optional[str] = None
    synthetic: Optional[Dict] = None
    split_seed: int = 0
    split_manifest: Optional[str] = None

    def __post_init__(self):
        if (self.root is None) == (self.synthetic is None):
            raise ConfigurationError("data needs exactly one of 'root' or 'synthetic'")
        if self.synthetic is not None:
            try:
                SynthConfig(**self.synthetic)
            except TypeError as e:
                raise ConfigurationError(f"Invalid synthetic data settings: {e}")


@dataclass
class RunConfig:
    """Everything that defines one benchmark run"""
    method: str
    hparams: Dict = field(default_factory=dict)
    pooling: Optional[str] = None
    epochs: int = DEFAULT_EPOCHS
    episodes_per_epoch: int = DEFAULT_EPISODES_PER_EPOCH
    test_episode_count: int = DEFAULT_TEST_EPISODES
    seed: int = 0
    lr: float = DEFAULT_LR
    train_episode: EpisodeSpec = field(default_factory=EpisodeSpec)
    test_episode: EpisodeSpec = field(default_factory=EpisodeSpec)
    data: DataConfig = field(default_factory=lambda: DataConfig(synthetic={}))
    output_dir: Optional[str] = None

    def __post_init__(self):
        entry = get_method(self.method)
        self.method = entry.name
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.episodes_per_epoch < 1 or self.test_episode_count < 1:
            raise ConfigurationError("episodes_per_epoch and test_episode_count must be >= 1")
        unknown = sorted(set(self.hparams) - set(entry.default_hparams))
        if unknown:
            raise ConfigurationError(
                f"Unknown hyperparameter(s) for {entry.name}: {unknown}. "
                f"Known: {sorted(entry.default_hparams) or 'none'}"
            )
        self.backbone_config()

    @property
    def category(self) -> str:
        return get_method(self.method).category

    def backbone_config(self) -> Conv64FConfig:
        factory = get_method(self.method).factory
        return Conv64FConfig(pooling=self.pooling or getattr(factory, 'default_pooling', 'pool4'))

    def to_dict(self) -> Dict:
        return {
            'run': {
                'epochs': self.epochs,
                'episodes_per_epoch': self.episodes_per_epoch,
                'test_episode_count': self.test_episode_count,
                'seed': self.seed,
                'lr': self.lr,
                'train_episode': self.train_episode.to_dict(),
                'test_episode': self.test_episode.to_dict(),
                'output_dir': self.output_dir,
            },
            'method': {
                'name': self.method,
                'pooling': self.backbone_config().pooling,
                'hparams': dict(self.hparams),
            },
            'data': asdict(self.data),
        }

    def digest(self) -> str:
        payload = self.to_dict()
        payload['run'].pop('output_dir')
        return config_digest(payload)


def run_config_from_dict(payload: Mapping) -> RunConfig:
    """
    Build a RunConfig from the three-section mapping

    Raises:
        ConfigurationError: unknown keys at any level or invalid values
    """
    if not isinstance(payload, Mapping):
        raise ConfigurationError("Run config must be a mapping with 'run', 'method' and 'data' sections")
    _reject_unknown('top level', payload, {'run', 'method', 'data'})
    run = dict(payload.get('run') or {})
    method = dict(payload.get('method') or {})
    data = dict(payload.get('data') or {'synthetic': {}})
    _reject_unknown('run', run, RUN_KEYS)
    _reject_unknown('method', method, METHOD_KEYS)
    _reject_unknown('data', data, DATA_KEYS)
    if 'name' not in method:
        raise ConfigurationError("method.name is required")

    episodes = {}
    try:
        for key in ('train_episode', 'test_episode'):
            spec = dict(run.pop(key, None) or {})
            _reject_unknown(f'run.{key}', spec, EPISODE_KEYS)
            episodes[key] = EpisodeSpec(**{k: int(v) for k, v in spec.items()})
        return RunConfig(
            method=canonical_name(str(method['name'])),
            hparams=dict(method.get('hparams') or {}),
            pooling=method.get('pooling'),
            epochs=int(run.get('epochs', DEFAULT_EPOCHS)),
            episodes_per_epoch=int(run.get('episodes_per_epoch', DEFAULT_EPISODES_PER_EPOCH)),
            test_episode_count=int(run.get('test_episode_count', DEFAULT_TEST_EPISODES)),
            seed=int(run.get('seed', 0)),
            lr=float(run.get('lr', DEFAULT_LR)),
            output_dir=run.get('output_dir'),
            data=DataConfig(**data),
            **episodes,
        )
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid run config: {e}")


def load_run_config(path: str) -> RunConfig:
    """Read a YAML run config file"""
    with open(path, 'r', encoding='utf-8') as f:
        try:
            payload = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"{path} is not valid YAML: {e}")
    return run_config_from_dict(payload or {})


@dataclass
class BenchmarkResult:
    """One evaluated (method, n_way, k_shot) setting"""
    method: str
    category: str
    n_way: int
    k_shot: int
    accuracy: float
    ci: float
    runtime_minutes: float
    seed: int
    config_digest: str
    n_episodes: int = 0
    hardware: str = ''

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise ConfigurationError(f"accuracy {self.accuracy} is outside [0, 100]")
        if self.ci < 0 or self.runtime_minutes < 0:
            raise ConfigurationError("ci and runtime_minutes must be >= 0")

    @property
    def setting(self) -> str:
        return format_setting_label(self.n_way, self.k_shot)


@dataclass
class TrainingRun:
    """A finished training run"""
    method: FewShotMethod
    config: RunConfig
    loss_log: List[Dict] = field(default_factory=list)
    epoch_seconds: List[float] = field(default_factory=list)
    hardware: Dict[str, str] = field(default_factory=dict)
    checkpoint_path: Optional[str] = None
    loss_log_path: Optional[str] = None

    @property
    def epochs_completed(self) -> int:
        return len(self.epoch_seconds)

    @property
    def final_train_accuracy(self) -> Optional[float]:
        """Mean training accuracy over the last epoch"""
        if not self.loss_log:
            return None
        last = self.loss_log[-1]['epoch']
        return float(np.mean([r['accuracy'] for r in self.loss_log if r['epoch'] == last]))


def _safe_name(name: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.-]+', 'plus', name)


class FewSARBenchmark:
    """Trains, evaluates and times few-shot methods under one episodic protocol"""

    def __init__(self, device: Optional[torch.device] = None, results_folder: Optional[str] = None):
        self.device = device or configure_torch_from_env()
        self.results_folder = results_folder or os.getenv('FEWSAR_RESULTS_DIR', 'benchmark_results')
        self.results: List[BenchmarkResult] = []
        self.failures: List[Dict] = []
        self.configs: Dict[str, Dict] = {}
        self.hardware = hardware_descriptor(self.device)
        self.verbose = os.getenv('VERBOSE', '0') in ('1', 'true', 'True')

    def log(self, message: str):
        if self.verbose:
            print(message)

    # --- data ---------------------------------------------------------------

    def prepare_data(self, data: DataConfig) -> Tuple[SARDataset, DatasetSplit]:
        """
        Load or generate the dataset and derive its class split

        Args:
            data: Data section of a run config

        Returns:
            (dataset, split)
        """
        if data.root is not None:
            dataset = load_dataset(data.root)
        else:
            dataset = generate_synthetic(SynthConfig(**data.synthetic))
        if data.split_manifest:
            split = load_split_manifest(data.split_manifest, dataset.class_names)
        else:
            split = make_split(dataset.class_ids, seed=data.split_seed)
        self.log(f"📦 Dataset: {len(dataset.class_names)} classes, "
                 f"train={sorted(split.train_classes)} test={sorted(split.test_classes)}")
        return dataset, split

    # --- training -----------------------------------------------------------

    def build_method(self, config: RunConfig, n_base_classes: int) -> FewShotMethod:
        kwargs = {
            'n_way': config.train_episode.n_way,
            'backbone_config': config.backbone_config(),
            'hparams': config.hparams,
        }
        if config.category == 'fine-tuning':
            kwargs['n_base_classes'] = n_base_classes
        return create_method(config.method, **kwargs)

    def train(self, config: RunConfig, dataset: SARDataset, split: DatasetSplit) -> TrainingRun:
        """
        Train one method and persist checkpoint plus loss log

        Fine-tuning methods pretrain with mini-batches over the base classes;
        meta and metric methods train episodically. Every epoch draws its
        episodes (or mini-batch order) from the (seed, epoch) stream.

        Args:
            config: Validated run config
            dataset: Chips
            split: Class split; training only touches split.train_classes

        Returns:
            TrainingRun
        """
        train_part, _ = split_dataset(dataset, split)
        seed_everything(config.seed)
        method = self.build_method(config, n_base_classes=len([c for c in train_part if train_part[c]]))
        method.to(self.device)
        optimizer = method.build_optimizer(config.lr)

        run = TrainingRun(method=method, config=config, hardware=dict(self.hardware))
        self.log(f"🚀 Training {config.method} ({config.category}) for {config.epochs} epochs")
        epochs = tqdm(range(config.epochs), desc=config.method, disable=not self.verbose)
        for epoch in epochs:
            started = time.perf_counter()
            try:
                logs = method.train_epoch(train_part, config.train_episode, config.episodes_per_epoch,
                                          config.seed, epoch, optimizer)
            except DivergedTrainingError as e:
                logger.error(f"{config.method} diverged: {e}")
                raise
            run.epoch_seconds.append(time.perf_counter() - started)
            run.loss_log.extend(logs)
            mean_loss = float(np.mean([r['loss'] for r in logs])) if logs else float('nan')
            logger.info(f"{config.method} epoch {epoch}: loss={mean_loss:.4f} ({run.epoch_seconds[-1]:.1f}s)")

        if config.output_dir:
            self.save_run(run)
        return run

    def save_run(self, run: TrainingRun) -> str:
        """Checkpoint (with config, seed, loss log) plus a JSON copy of the loss log"""
        config = run.config
        os.makedirs(config.output_dir, exist_ok=True)
        stem = f"{_safe_name(config.method)}_{config.train_episode.n_way}w{config.train_episode.k_shot}s_seed{config.seed}"
        run.checkpoint_path = save_checkpoint(
            os.path.join(config.output_dir, f"{stem}.pt"),
            run.method,
            run_config=config.to_dict(),
            seed=config.seed,
            extra={
                'loss_log': run.loss_log,
                'epoch_seconds': run.epoch_seconds,
                'hardware': run.hardware,
                'config_digest': config.digest(),
            },
        )
        run.loss_log_path = os.path.join(config.output_dir, f"{stem}_loss.json")
        with open(run.loss_log_path, 'w', encoding='utf-8') as f:
            json.dump(run.loss_log, f, indent=2)
        self.log(f"💾 Checkpoint saved to: {run.checkpoint_path}")
        return run.checkpoint_path

    def time_run(self, run: TrainingRun) -> float:
        """Mean wall-clock minutes per epoch (0 for a run without epochs)"""
        if not run.epoch_seconds:
            return 0.0
        return float(np.mean(run.epoch_seconds)) / 60.0

    # --- evaluation ---------------------------------------------------------

    def evaluate_predictor(self, predict: Callable[[EpisodeBatch], torch.Tensor],
                           split_part: Mapping[int, Sequence[ImageChip]], spec: EpisodeSpec,
                           n_episodes: int, seed: int) -> List[float]:
        """
        Per-episode accuracies of any predictor

        Args:
            predict: batch -> predicted local labels of the query set
            split_part: class -> chips map (test classes)
            spec: Test episode shape
            n_episodes: Number of episodes
            seed: Sampler seed

        Returns:
            list of accuracies in [0, 1], in sampling order
        """
        if n_episodes < 1:
            raise ConfigurationError(f"n_episodes must be >= 1, got {n_episodes}")
        sampler = EpisodeSampler(split_part, spec, seed=seed)
        accuracies = []
        for episode in tqdm(sampler.episodes(n_episodes), total=n_episodes, desc='eval',
                            disable=not self.verbose):
            batch = episode.to_batch().to(self.device)
            predictions = predict(batch).to(batch.query_y.device)
            correct = int((predictions == batch.query_y).sum())
            accuracies.append(correct / (spec.n_way * spec.n_query))
        return accuracies

    def evaluate(self, checkpoint: Union[str, FewShotMethod], split_part: Mapping[int, Sequence[ImageChip]],
                 spec: EpisodeSpec, n_episodes: int, seed: int, runtime_minutes: float = 0.0,
                 digest: str = '') -> BenchmarkResult:
        """
        Episodic test accuracy of a trained method

        Args:
            checkpoint: Checkpoint path or an in-memory method
            split_part: Test part of the split
            spec: Test episode shape
            n_episodes: Number of test episodes
            seed: Sampler seed
            runtime_minutes: Training minutes per epoch to attach to the result
            digest: Config digest to attach (read from the checkpoint when loading one)

        Returns:
            BenchmarkResult with mean accuracy and 95% CI half-width in percent
        """
        if isinstance(checkpoint, str):
            method, payload = load_checkpoint(checkpoint, device=self.device)
            extra = payload.get('extra', {})
            digest = digest or extra.get('config_digest', '')
            if not runtime_minutes and extra.get('epoch_seconds'):
                runtime_minutes = float(np.mean(extra['epoch_seconds'])) / 60.0
        else:
            method = checkpoint.to(self.device)

        # fine-tuning heads draw their init from the global torch RNG
        seed_everything(seed)
        accuracies = self.evaluate_predictor(method.predict, split_part, spec, n_episodes, seed)
        mean, ci = summarize_accuracies(accuracies)
        result = BenchmarkResult(
            method=method.name,
            category=method.category,
            n_way=spec.n_way,
            k_shot=spec.k_shot,
            accuracy=round(mean, 6),
            ci=round(ci, 6),
            runtime_minutes=runtime_minutes,
            seed=seed,
            config_digest=digest,
            n_episodes=n_episodes,
            hardware=format_hardware(self.hardware),
        )
        self.log(f"✅ {result.method} {result.setting}: {format_accuracy_with_ci(result.accuracy, result.ci)}")
        return result

    def evaluate_checkpoint(self, path: str, n_episodes: Optional[int] = None,
                            seed: Optional[int] = None) -> BenchmarkResult:
        """Evaluate a checkpoint on the test classes of the data it was trained with"""
        _, payload = load_checkpoint(path)
        stored = payload.get('run_config') or {}
        if not stored:
            raise ConfigurationError(f"{path} carries no run config; evaluate() it with an explicit split")
        config = run_config_from_dict(stored)
        dataset, split = self.prepare_data(config.data)
        _, test_part = split_dataset(dataset, split)
        result = self.evaluate(path, test_part, config.test_episode,
                               n_episodes or config.test_episode_count,
                               seed=config.seed if seed is None else seed)
        self.configs[result.config_digest] = stored
        self.results.append(result)
        return result

    # --- full runs ----------------------------------------------------------

    def run(self, config: RunConfig) -> BenchmarkResult:
        """prepare_data -> train -> evaluate on the test classes"""
        dataset, split = self.prepare_data(config.data)
        training = self.train(config, dataset, split)
        _, test_part = split_dataset(dataset, split)
        digest = config.digest()
        self.configs[digest] = config.to_dict()
        result = self.evaluate(training.method, test_part, config.test_episode, config.test_episode_count,
                               seed=config.seed, runtime_minutes=self.time_run(training), digest=digest)
        self.results.append(result)
        return result

    def run_full_benchmark(self, configs: Sequence[RunConfig], save_results: bool = True) -> List[BenchmarkResult]:
        """
        Run every config in order; a failing method is recorded and skipped

        Args:
            configs: Run configs
            save_results: Write a timestamped JSON results file afterwards

        Returns:
            list of results of the runs that succeeded
        """
        self.log("🚀 FEW-SHOT SAR BENCHMARK")
        self.log("=" * 60)
        results = []
        for config in configs:
            label = f"{config.method} {format_setting_label(config.test_episode.n_way, config.test_episode.k_shot)}"
            try:
                self.log(f"📊 Running {label}...")
                results.append(self.run(config))
            except FewSARError as e:
                self.log(f"❌ {config.method}: {e}")
                logger.error(f"{label} failed: {e}")
                self.failures.append({'method': config.method, 'error': str(e)})
                continue
            except Exception as e:
                self.log(f"❌ {config.method}: Error - {e}")
                logger.exception(f"{label} failed with an unexpected error")
                self.failures.append({'method': config.method, 'error': f"{type(e).__name__}: {e}"})
                continue

        self.print_results_summary()
        if save_results:
            self.save_results_to_file()
        self.log(f"\n✅ Benchmark complete! {len(results)} succeeded, {len(self.failures)} failed.")
        return results

    def print_results_summary(self):
        """Print accuracy and runtime of every finished run"""
        if not self.results:
            self.log("❌ No results available")
            return
        self.log(f"\n📊 BENCHMARK SUMMARY")
        self.log("=" * 60)
        self.log(f"🖥️  Hardware: {self.hardware.get('processor')} / {self.hardware.get('device')}")
        for result in sorted(self.results, key=lambda r: (r.category, -r.accuracy)):
            self.log(f"🏷️  {result.method:<12} [{result.category:<11}] {result.setting}: "
                     f"{format_accuracy_with_ci(result.accuracy, result.ci):>16}  "
                     f"⏱️ {format_minutes(result.runtime_minutes)} min/epoch")

    def save_results_to_file(self, filename: str = None, results_folder: str = None) -> str:
        """Save results, failures, configs and hardware to a JSON file"""
        results_folder = results_folder or self.results_folder
        if not os.path.exists(results_folder):
            os.makedirs(results_folder)
            self.log(f"📁 Created results folder: {results_folder}")

        if filename is None:
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            filename = f"benchmark_results_{timestamp}.json"
        file_path = os.path.join(results_folder, filename)

        payload = {
            "timestamp": datetime.now().isoformat(),
            "hardware": self.hardware,
            "results": [asdict(result) for result in self.results],
            "failures": self.failures,
            "configs": self.configs,
        }
        with open(file_path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, ensure_ascii=False)
        self.log(f"\n💾 Results saved to: {file_path}")
        return file_path


def load_results_file(path: str) -> Tuple[List[BenchmarkResult], Dict]:
    """Results and metadata (hardware, failures, configs) from a saved JSON file"""
    with open(path, 'r', encoding='utf-8') as f:
        payload = json.load(f)
    results = [BenchmarkResult(**record) for record in payload.get('results', [])]
    return results, {k: v for k, v in payload.items() if k != 'results'}


def load_results_dir(results_dir: str) -> Tuple[List[BenchmarkResult], Dict[str, str]]:
    """All results of every JSON file in a folder, files in name order; hardware of the last file"""
    results: List[BenchmarkResult] = []
    hardware: Dict[str, str] = {}
    for name in sorted(os.listdir(results_dir)):
        if name.endswith('.json'):
            file_results, meta = load_results_file(os.path.join(results_dir, name))
            results.extend(file_results)
            hardware = meta.get('hardware', hardware)
    return results, hardware


def main():
    """Quick synthetic ProtoNet run"""
    benchmark = FewSARBenchmark()
    config = RunConfig(
        method='ProtoNet',
        epochs=2,
        episodes_per_epoch=20,
        test_episode_count=50,
        train_episode=EpisodeSpec(5, 5, 15),
        test_episode=EpisodeSpec(5, 5, 15),
        data=DataConfig(synthetic={'images_per_class': 40}),
    )
    benchmark.run_full_benchmark([config])


if __name__ == "__main__":
    main()
