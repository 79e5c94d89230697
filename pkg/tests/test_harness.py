import json
import math
from pathlib import Path

import numpy as np
import pytest
import torch

import bench
import prepare_data
from fewsar_benchmark import (
    BenchmarkResult,
    DataConfig,
    FewSARBenchmark,
    RunConfig,
    TrainingRun,
    load_results_file,
    load_run_config,
    run_config_from_dict,
)
from models.checkpoint import load_checkpoint
from sar_data.chips import load_dataset
from sar_data.episode_sampler import EpisodeSpec, split_dataset
from utils.errors import ConfigurationError, UnavailableMethodError
from utils.experiment_helpers import seed_everything, summarize_accuracies

SMALL_DATA = {'n_classes': 6, 'images_per_class': 6, 'rng_seed': 0}


def _tiny_config(**overrides):
    settings = dict(
        method='ProtoNet',
        epochs=1,
        episodes_per_epoch=2,
        test_episode_count=5,
        train_episode=EpisodeSpec(3, 1, 2),
        test_episode=EpisodeSpec(3, 1, 2),
        data=DataConfig(synthetic=dict(SMALL_DATA)),
    )
    settings.update(overrides)
    return RunConfig(**settings)


@pytest.fixture
def benchmark(tmp_path, monkeypatch):
    monkeypatch.delenv('VERBOSE', raising=False)
    monkeypatch.delenv('FEWSAR_DEVICE', raising=False)
    return FewSARBenchmark(results_folder=str(tmp_path / 'results'))


# --- statistics -------------------------------------------------------------

def test_confidence_interval_formula():
    mean, ci = summarize_accuracies([0.5, 1.0, 0.75, 0.25])
    assert mean == pytest.approx(62.5)
    assert ci == pytest.approx(1.96 * np.std([0.5, 1.0, 0.75, 0.25]) / 2 * 100)


def test_oracle_predictor_scores_perfectly(benchmark, make_dataset):
    dataset = make_dataset(n_classes=6, per_class=5)
    accuracies = benchmark.evaluate_predictor(lambda batch: batch.query_y, dataset.chips,
                                              EpisodeSpec(5, 1, 3), n_episodes=50, seed=0)
    assert summarize_accuracies(accuracies) == (100.0, 0.0)


def test_constant_predictor_scores_chance(benchmark, make_dataset):
    dataset = make_dataset(n_classes=6, per_class=5)
    accuracies = benchmark.evaluate_predictor(lambda batch: torch.zeros_like(batch.query_y), dataset.chips,
                                              EpisodeSpec(5, 1, 3), n_episodes=2000, seed=0)
    mean, ci = summarize_accuracies(accuracies)
    assert len(accuracies) == 2000
    assert mean == pytest.approx(20.0)
    assert ci == pytest.approx(0.0, abs=1e-9)


def test_evaluate_predictor_needs_episodes(benchmark, make_dataset):
    with pytest.raises(ConfigurationError):
        benchmark.evaluate_predictor(lambda b: b.query_y, make_dataset().chips, EpisodeSpec(), 0, 0)


def test_benchmark_result_ranges():
    with pytest.raises(ConfigurationError):
        BenchmarkResult('ProtoNet', 'metric', 5, 1, 101.0, 0.5, 0.1, 0, 'abc')
    with pytest.raises(ConfigurationError):
        BenchmarkResult('ProtoNet', 'metric', 5, 1, 50.0, -0.5, 0.1, 0, 'abc')
    assert BenchmarkResult('ProtoNet', 'metric', 5, 1, 50.0, 0.5, 0.1, 0, 'abc').setting == '5-way 1-shot'


# --- run configs ------------------------------------------------------------

def test_run_config_validation():
    with pytest.raises(UnavailableMethodError):
        _tiny_config(method='Versa')
    with pytest.raises(ConfigurationError):
        _tiny_config(lr=0.0)
    with pytest.raises(ConfigurationError):
        _tiny_config(epochs=-1)
    with pytest.raises(ConfigurationError):
        _tiny_config(method='DN4', hparams={'k': 3})
    with pytest.raises(ConfigurationError):
        DataConfig(root='data/mstar', synthetic={})
    with pytest.raises(ConfigurationError):
        DataConfig(synthetic={'n_colors': 3})


def test_run_config_resolves_aliases_and_pooling():
    config = _tiny_config(method='ATLNet')
    assert config.method == 'ATL_Net'
    assert config.backbone_config().pooling == 'pool2'
    assert _tiny_config().backbone_config().pooling == 'pool4'


def test_yaml_config_loads(tmp_path):
    path = tmp_path / 'run.yaml'
    path.write_text(
        "run:\n"
        "  epochs: 3\n"
        "  seed: 7\n"
        "  test_episode: {n_way: 5, k_shot: 5, n_query: 15}\n"
        "method:\n"
        "  name: Proto_Net\n"
        "data:\n"
        "  synthetic: {n_classes: 10, images_per_class: 20}\n"
    )
    config = load_run_config(str(path))
    assert config.method == 'ProtoNet'
    assert config.epochs == 3 and config.seed == 7
    assert config.test_episode == EpisodeSpec(5, 5, 15)
    assert config.episodes_per_epoch == 200


@pytest.mark.parametrize('payload', [
    {'run': {'epoch': 3}, 'method': {'name': 'ProtoNet'}},
    {'run': {'test_episode': {'ways': 5}}, 'method': {'name': 'ProtoNet'}},
    {'method': {'name': 'ProtoNet', 'optimizer': 'sgd'}},
    {'method': {'name': 'ProtoNet'}, 'data': {'path': 'x'}},
    {'method': {'name': 'ProtoNet'}, 'extra': {}},
    {'run': {'epochs': 'many'}, 'method': {'name': 'ProtoNet'}},
    {'run': {'epochs': 1}},
])
def test_config_rejects_unknown_or_bad_keys(payload):
    with pytest.raises(ConfigurationError):
        run_config_from_dict(payload)


def test_digest_ignores_output_dir_only():
    base = _tiny_config()
    assert base.digest() == _tiny_config().digest()
    assert base.digest() == _tiny_config(output_dir='elsewhere').digest()
    assert base.digest() != _tiny_config(seed=1).digest()
    assert base.digest() != _tiny_config(lr=0.01).digest()


def test_config_dict_roundtrip():
    config = _tiny_config(method='DN4', hparams={'k_neighbors': 1}, seed=3)
    rebuilt = run_config_from_dict(config.to_dict())
    assert rebuilt.digest() == config.digest()


# --- training and timing ----------------------------------------------------

def test_time_run_mean_minutes(benchmark):
    run = TrainingRun(method=None, config=None, epoch_seconds=[60.0, 120.0])
    assert benchmark.time_run(run) == pytest.approx(1.5)
    assert benchmark.time_run(TrainingRun(method=None, config=None)) == 0.0


def test_zero_epoch_checkpoint_equals_initialization(benchmark, tmp_path):
    config = _tiny_config(epochs=0, seed=5, output_dir=str(tmp_path / 'runs'))
    dataset, split = benchmark.prepare_data(config.data)
    run = benchmark.train(config, dataset, split)
    assert run.epochs_completed == 0
    assert benchmark.time_run(run) == 0.0
    assert run.checkpoint_path.endswith('ProtoNet_3w1s_seed5.pt')

    loaded, payload = load_checkpoint(run.checkpoint_path)
    assert payload['seed'] == 5
    seed_everything(5)
    fresh = benchmark.build_method(config, n_base_classes=3)
    for name, tensor in fresh.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], tensor)


def test_training_is_deterministic(benchmark):
    config = _tiny_config(epochs=2)
    dataset, split = benchmark.prepare_data(config.data)
    first = benchmark.train(config, dataset, split)
    second = benchmark.train(config, dataset, split)
    assert [r['loss'] for r in first.loss_log] == pytest.approx([r['loss'] for r in second.loss_log])
    assert first.epochs_completed == 2
    assert [(r['epoch'], r['step']) for r in first.loss_log] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    for name, tensor in first.method.state_dict().items():
        assert torch.allclose(tensor, second.method.state_dict()[name])


def test_training_writes_loss_log(benchmark, tmp_path):
    config = _tiny_config(output_dir=str(tmp_path / 'runs'))
    dataset, split = benchmark.prepare_data(config.data)
    run = benchmark.train(config, dataset, split)
    with open(run.loss_log_path) as f:
        assert json.load(f) == run.loss_log
    assert 0.0 <= run.final_train_accuracy <= 1.0


# --- full runs --------------------------------------------------------------

def test_full_benchmark_records_failures(benchmark):
    good = _tiny_config()
    bad = _tiny_config(method='DN4', test_episode=EpisodeSpec(3, 1, 50))
    results = benchmark.run_full_benchmark([good, bad])
    assert [r.method for r in results] == ['ProtoNet']
    assert len(benchmark.failures) == 1
    assert benchmark.failures[0]['method'] == 'DN4'
    assert benchmark.failures[0]['error']

    saved = list(Path(benchmark.results_folder).glob('benchmark_results_*.json'))
    assert len(saved) == 1
    loaded, meta = load_results_file(str(saved[0]))
    assert loaded == benchmark.results
    assert meta['failures'] == benchmark.failures
    assert results[0].config_digest in meta['configs']
    assert 'processor' in meta['hardware']


def test_checkpoint_evaluation_matches_in_memory(benchmark, tmp_path):
    config = _tiny_config(output_dir=str(tmp_path / 'runs'), seed=2)
    in_memory = benchmark.run(config)
    checkpoint = str(tmp_path / 'runs' / 'ProtoNet_3w1s_seed2.pt')
    reloaded = benchmark.evaluate_checkpoint(checkpoint)
    assert reloaded.accuracy == pytest.approx(in_memory.accuracy)
    assert reloaded.ci == pytest.approx(in_memory.ci)
    assert reloaded.config_digest == in_memory.config_digest == config.digest()
    assert reloaded.n_episodes == 5
    assert math.isfinite(reloaded.runtime_minutes)


def test_finetune_checkpoint_evaluation_is_reproducible(benchmark, tmp_path):
    config = _tiny_config(method='Baseline++', epochs=0, hparams={'finetune_steps': 5},
                          output_dir=str(tmp_path / 'runs'))
    dataset, split = benchmark.prepare_data(config.data)
    run = benchmark.train(config, dataset, split)
    _, test_part = split_dataset(dataset, split)

    first = benchmark.evaluate(run.checkpoint_path, test_part, EpisodeSpec(3, 1, 2), n_episodes=10, seed=3)
    torch.rand(7)
    second = benchmark.evaluate(run.checkpoint_path, test_part, EpisodeSpec(3, 1, 2), n_episodes=10, seed=3)
    assert first.accuracy == second.accuracy
    assert first.ci == second.ci
    assert 'processor=' in first.hardware


def test_runtime_grows_with_episodes_per_epoch(benchmark):
    dataset, split = benchmark.prepare_data(_tiny_config().data)
    short = benchmark.train(_tiny_config(episodes_per_epoch=2), dataset, split)
    long = benchmark.train(_tiny_config(episodes_per_epoch=10), dataset, split)
    assert benchmark.time_run(long) > benchmark.time_run(short) > 0.0


# --- command line -----------------------------------------------------------

def test_cli_lists_methods(capsys):
    assert bench.main(['list-methods']) == 0
    out = capsys.readouterr().out
    assert 'ATL_Net' in out
    assert 'reserved' in out


def test_cli_reports_configuration_errors(tmp_path, capsys):
    path = tmp_path / 'broken.yaml'
    path.write_text("method:\n  name: ProtoNet\nrun:\n  epoch: 2\n")
    assert bench.main(['--results-dir', str(tmp_path), 'run', '--config', str(path)]) == 2
    assert 'epoch' in capsys.readouterr().out


def test_synth_command_reads_config(tmp_path):
    config = tmp_path / 'synth.yaml'
    config.write_text("synthetic:\n  n_classes: 3\n  images_per_class: 5\n  rng_seed: 1\n")
    out = tmp_path / 'synth'
    assert prepare_data.main(['synth', '--config', str(config), '--out', str(out), '--images-per-class', '2']) == 0
    assert load_dataset(str(out)).counts() == {'class_00': 2, 'class_01': 2, 'class_02': 2}


def test_synth_command_rejects_unknown_keys(tmp_path, capsys):
    config = tmp_path / 'synth.yaml'
    config.write_text("n_classes: 3\nnoise: 0.1\n")
    assert prepare_data.main(['synth', '--config', str(config), '--out', str(tmp_path / 'synth')]) == 2
    assert 'noise' in capsys.readouterr().out
