import numpy as np
import pytest
import torch

from sar_data.chips import CHIP_SIZE, ImageChip, SARDataset
from sar_data.episode_sampler import Episode, EpisodeSpec, sample_episode


def _random_dataset(n_classes=6, per_class=20, seed=0, size=CHIP_SIZE):
    rng = np.random.default_rng(seed)
    chips = {}
    for class_id in range(n_classes):
        chips[class_id] = [
            ImageChip(
                pixels=rng.uniform(0.0, 1.0, size=(size, size)).astype(np.float32),
                class_id=class_id,
                source_id=f"c{class_id}-{i}",
            )
            for i in range(per_class)
        ]
    return SARDataset(class_names=[f"class_{k}" for k in range(n_classes)], chips=chips)


@pytest.fixture
def make_dataset():
    """Factory for small datasets of uniform-noise chips"""
    return _random_dataset


@pytest.fixture
def make_episode():
    """Factory: one episode sampled from a fresh random dataset"""

    def build(n_way=3, k_shot=1, n_query=2, seed=0) -> Episode:
        dataset = _random_dataset(n_classes=n_way + 1, per_class=k_shot + n_query + 2, seed=seed)
        spec = EpisodeSpec(n_way=n_way, k_shot=k_shot, n_query=n_query)
        return sample_episode(dataset.chips, spec, np.random.default_rng(seed))

    return build


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
