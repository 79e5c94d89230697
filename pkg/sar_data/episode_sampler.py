#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Class-disjoint splits and N-way K-shot episode sampling.

Sampling is without replacement inside an episode and with replacement
across episodes. A sampler owns one numpy Generator; parallel samplers need
their own seeds.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import yaml

from sar_data.chips import ImageChip, SARDataset, chips_to_array
from utils.errors import (
    ConfigurationError,
    EpisodeInvariantError,
    InsufficientClassesError,
    InsufficientDataError,
)

logger = logging.getLogger(__name__)

DEFAULT_QUERY = 15


@dataclass
class DatasetSplit:
    """Train/test class partition"""
    train_classes: FrozenSet[int]
    test_classes: FrozenSet[int]
    seed: int = 0

    def __post_init__(self):
        self.train_classes = frozenset(self.train_classes)
        self.test_classes = frozenset(self.test_classes)
        if self.train_classes & self.test_classes:
            raise ConfigurationError(
                f"Train and test classes overlap: {sorted(self.train_classes & self.test_classes)}"
            )


@dataclass
class EpisodeSpec:
    """Shape of one few-shot task"""
    n_way: int = 5
    k_shot: int = 1
    n_query: int = DEFAULT_QUERY

    def __post_init__(self):
        for name in ('n_way', 'k_shot', 'n_query'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"EpisodeSpec.{name} must be >= 1, got {getattr(self, name)}")

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class EpisodeBatch:
    """Tensor view of an Episode, ready for a model"""
    support_x: torch.Tensor
    support_y: torch.Tensor
    query_x: torch.Tensor
    query_y: torch.Tensor
    n_way: int
    k_shot: int
    n_query: int

    def to(self, device) -> 'EpisodeBatch':
        return EpisodeBatch(
            support_x=self.support_x.to(device),
            support_y=self.support_y.to(device),
            query_x=self.query_x.to(device),
            query_y=self.query_y.to(device),
            n_way=self.n_way, k_shot=self.k_shot, n_query=self.n_query,
        )


@dataclass
class Episode:
    """
    One sampled task

    Support and query lists are class-major: all chips of local label 0 first,
    then label 1, and so on.
    """
    support: List[Tuple[ImageChip, int]]
    query: List[Tuple[ImageChip, int]]
    label_map: Dict[int, int]
    spec: EpisodeSpec = field(default_factory=EpisodeSpec)

    def validate(self) -> None:
        """Raise EpisodeInvariantError when any structural invariant is broken"""
        spec = self.spec
        if len(self.support) != spec.n_way * spec.k_shot:
            raise EpisodeInvariantError(
                f"Support has {len(self.support)} chips, expected {spec.n_way * spec.k_shot}"
            )
        if len(self.query) != spec.n_way * spec.n_query:
            raise EpisodeInvariantError(
                f"Query has {len(self.query)} chips, expected {spec.n_way * spec.n_query}"
            )
        if len(self.label_map) != spec.n_way or sorted(self.label_map.values()) != list(range(spec.n_way)):
            raise EpisodeInvariantError(f"Label map {self.label_map} is not a bijection onto 0..{spec.n_way - 1}")

        support_ids = {chip.source_id for chip, _ in self.support}
        query_ids = {chip.source_id for chip, _ in self.query}
        if support_ids & query_ids:
            raise EpisodeInvariantError("Support and query share chips")

        for part, per_class in ((self.support, spec.k_shot), (self.query, spec.n_query)):
            counts = np.zeros(spec.n_way, dtype=int)
            for chip, label in part:
                if self.label_map.get(chip.class_id) != label:
                    raise EpisodeInvariantError(
                        f"Chip {chip.source_id} of class {chip.class_id} carries local label {label}"
                    )
                counts[label] += 1
            if not np.all(counts == per_class):
                raise EpisodeInvariantError(f"Per-class counts {counts.tolist()}, expected {per_class} each")

    def to_batch(self) -> EpisodeBatch:
        support_chips = [chip for chip, _ in self.support]
        query_chips = [chip for chip, _ in self.query]
        return EpisodeBatch(
            support_x=torch.from_numpy(chips_to_array(support_chips)),
            support_y=torch.tensor([label for _, label in self.support], dtype=torch.long),
            query_x=torch.from_numpy(chips_to_array(query_chips)),
            query_y=torch.tensor([label for _, label in self.query], dtype=torch.long),
            n_way=self.spec.n_way, k_shot=self.spec.k_shot, n_query=self.spec.n_query,
        )


def make_split(class_ids, seed: int = 0) -> DatasetSplit:
    """
    Deterministic seeded partition of the classes into train/test halves

    Args:
        class_ids: All class ids (10 for MSTAR)
        seed: Shuffle seed

    Returns:
        DatasetSplit: the first half of the shuffled sorted ids trains; odd
        counts give the extra class to train
    """
    ordered = sorted(set(class_ids))
    if len(ordered) < 2:
        raise InsufficientClassesError(f"Need at least 2 classes to split, got {len(ordered)}")
    rng = np.random.default_rng(seed)
    shuffled = [ordered[i] for i in rng.permutation(len(ordered))]
    n_train = (len(shuffled) + 1) // 2
    return DatasetSplit(
        train_classes=frozenset(shuffled[:n_train]),
        test_classes=frozenset(shuffled[n_train:]),
        seed=seed,
    )


def save_split_manifest(split: DatasetSplit, class_names: Sequence[str], path: str) -> None:
    """Write the split as YAML: class names on each side plus the seed"""
    payload = {
        'seed': int(split.seed),
        'train': [class_names[c] for c in sorted(split.train_classes)],
        'test': [class_names[c] for c in sorted(split.test_classes)],
    }
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(payload, f, sort_keys=False)
    logger.info(f"Split manifest written to {path}")


def load_split_manifest(path: str, class_names: Sequence[str]) -> DatasetSplit:
    with open(path, 'r', encoding='utf-8') as f:
        payload = yaml.safe_load(f) or {}
    unknown = set(payload) - {'seed', 'train', 'test'}
    if unknown:
        raise ConfigurationError(f"Unknown keys in split manifest: {sorted(unknown)}")
    index = {name: i for i, name in enumerate(class_names)}
    try:
        train = frozenset(index[name] for name in payload['train'])
        test = frozenset(index[name] for name in payload['test'])
    except KeyError as e:
        raise ConfigurationError(f"Split manifest names a class not in the dataset: {e}")
    return DatasetSplit(train_classes=train, test_classes=test, seed=int(payload.get('seed', 0)))


def split_dataset(dataset: SARDataset, split: DatasetSplit) -> Tuple[Dict[int, List[ImageChip]], Dict[int, List[ImageChip]]]:
    """(train part, test part) class -> chips maps"""
    known = set(dataset.class_ids)
    if not (split.train_classes | split.test_classes) <= known:
        raise ConfigurationError("Split refers to classes missing from the dataset")
    return dataset.subset(split.train_classes), dataset.subset(split.test_classes)


def sample_episode(split_part: Mapping[int, Sequence[ImageChip]], spec: EpisodeSpec,
                   rng: np.random.Generator) -> Episode:
    """
    Sample one N-way K-shot episode

    Args:
        split_part: class -> chips map of one side of the split
        spec: Episode shape
        rng: Seeded generator owned by the caller

    Returns:
        Episode with local labels assigned in sampled class order
    """
    needed = spec.k_shot + spec.n_query
    class_ids = sorted(split_part)
    eligible = [c for c in class_ids if len(split_part[c]) >= needed]
    if len(eligible) < spec.n_way:
        short = sorted((c for c in class_ids if c not in eligible), key=lambda c: len(split_part[c]))
        if short:
            limiting = short[0]
            raise InsufficientDataError(
                f"Class {limiting} has {len(split_part[limiting])} chips, {needed} needed "
                f"(k_shot={spec.k_shot} + n_query={spec.n_query}); only {len(eligible)} of "
                f"{spec.n_way} required classes are eligible",
                limiting_class=limiting,
            )
        raise InsufficientDataError(
            f"{spec.n_way}-way episode requested but only {len(class_ids)} classes are available"
        )

    chosen = rng.choice(np.asarray(eligible), size=spec.n_way, replace=False)
    label_map = {int(c): slot for slot, c in enumerate(chosen)}

    support: List[Tuple[ImageChip, int]] = []
    query: List[Tuple[ImageChip, int]] = []
    for class_id, label in label_map.items():
        pool = split_part[class_id]
        picks = rng.choice(len(pool), size=needed, replace=False)
        support.extend((pool[i], label) for i in picks[:spec.k_shot])
        query.extend((pool[i], label) for i in picks[spec.k_shot:])

    return Episode(support=support, query=query, label_map=label_map, spec=spec)


class EpisodeSampler:
    """Iterator of episodes over one split part with its own seeded generator"""

    def __init__(self, split_part: Mapping[int, Sequence[ImageChip]], spec: EpisodeSpec,
                 seed: int = 0, validate: bool = False):
        self.split_part = split_part
        self.spec = spec
        self.seed = seed
        self.validate = validate
        self.rng = np.random.default_rng(seed)

        ineligible = [c for c, chips in split_part.items() if len(chips) < spec.k_shot + spec.n_query]
        if ineligible:
            logger.warning(f"Classes {ineligible} have fewer than {spec.k_shot + spec.n_query} chips and are never sampled")

    def sample(self) -> Episode:
        episode = sample_episode(self.split_part, self.spec, self.rng)
        if self.validate:
            episode.validate()
        return episode

    def episodes(self, count: int) -> Iterator[Episode]:
        for _ in range(count):
            yield self.sample()

    def __iter__(self) -> Iterator[Episode]:
        while True:
            yield self.sample()


def episode_seed(base_seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for a named stream (e.g. epoch index) of a run"""
    return np.random.default_rng([int(base_seed), *[int(s) for s in stream]])
