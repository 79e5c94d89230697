#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Relation Network: a learned convolutional comparator over (support, query)
feature-map pairs. Support maps of a class are summed for k > 1 shots; the
relation module sees the channel concatenation and outputs a logistic score.
Training regresses scores onto one-hot targets with mean squared error.
"""

from typing import Dict

import torch
import torch.nn as nn
import torch.nn.functional as F

from methods.base import FewShotMethod
from sar_data.episode_sampler import EpisodeBatch
from utils.errors import ConfigurationError


class RelationModule(nn.Module):
    """Two conv blocks + two fully-connected layers -> score in [0, 1]"""

    def __init__(self, feature_channels: int = 64, feature_hw=(21, 21), hidden_channels: int = 64,
                 hidden_units: int = 8):
        super().__init__()
        self.feature_channels = feature_channels
        self.feature_hw = tuple(feature_hw)
        self.layers = nn.Sequential(
            nn.Conv2d(2 * feature_channels, hidden_channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(hidden_channels),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(hidden_channels, hidden_channels, kernel_size=3, padding=1),
            nn.BatchNorm2d(hidden_channels),
            nn.ReLU(),
            nn.MaxPool2d(2),
        )
        h, w = self.feature_hw[0] // 4, self.feature_hw[1] // 4
        self.fc = nn.Sequential(
            nn.Linear(hidden_channels * h * w, hidden_units),
            nn.ReLU(),
            nn.Linear(hidden_units, 1),
        )

    def forward(self, pairs: torch.Tensor) -> torch.Tensor:
        if pairs.shape[1] != 2 * self.feature_channels or tuple(pairs.shape[2:]) != self.feature_hw:
            raise ConfigurationError(
                f"Relation module expects (B, {2 * self.feature_channels}, {self.feature_hw[0]}, "
                f"{self.feature_hw[1]}) pairs, got {tuple(pairs.shape)}"
            )
        out = self.layers(pairs)
        return torch.sigmoid(self.fc(out.flatten(1))).squeeze(1)


def relation_scores(support_maps: torch.Tensor, support_labels: torch.Tensor, query_maps: torch.Tensor,
                    relation: RelationModule, n_way: int) -> torch.Tensor:
    """
    Relation score of every (query, class) pair

    Args:
        support_maps: (n_way * k_shot, C, H, W) pool2 feature maps
        support_labels: local labels of the support maps
        query_maps: (n_query, C, H, W)
        relation: comparator module
        n_way: number of classes

    Returns:
        (n_query, n_way) scores in [0, 1]
    """
    if support_maps.shape[1:] != query_maps.shape[1:]:
        raise ConfigurationError(
            f"Support maps {tuple(support_maps.shape[1:])} and query maps {tuple(query_maps.shape[1:])} differ"
        )
    class_maps = torch.zeros((n_way,) + tuple(support_maps.shape[1:]),
                             dtype=support_maps.dtype, device=support_maps.device)
    class_maps = class_maps.index_add(0, support_labels, support_maps)

    n_query = query_maps.shape[0]
    support_rep = class_maps.unsqueeze(0).expand(n_query, -1, -1, -1, -1)
    query_rep = query_maps.unsqueeze(1).expand(-1, n_way, -1, -1, -1)
    pairs = torch.cat([support_rep, query_rep], dim=2).reshape(n_query * n_way, -1, *query_maps.shape[2:])
    return relation(pairs).view(n_query, n_way)


class RelationNet(FewShotMethod):
    name = 'RelationNet'
    category = 'metric'
    default_pooling = 'pool2'
    DEFAULT_HPARAMS = {
        'hidden_channels': 64,
        'hidden_units': 8,
    }

    def __init__(self, n_way: int = 5, backbone_config=None, hparams=None):
        super().__init__(n_way=n_way, backbone_config=backbone_config, hparams=hparams)
        self.relation = RelationModule(
            feature_channels=self.backbone_config.filters,
            feature_hw=self.backbone_config.output_hw(),
            hidden_channels=int(self.hparams['hidden_channels']),
            hidden_units=int(self.hparams['hidden_units']),
        )

    def set_forward(self, batch: EpisodeBatch) -> torch.Tensor:
        support_maps, query_maps = self.split_embed(batch)
        return relation_scores(support_maps, batch.support_y, query_maps, self.relation, batch.n_way)

    def set_forward_loss(self, batch: EpisodeBatch):
        scores = self.set_forward(batch)
        targets = F.one_hot(batch.query_y, batch.n_way).to(scores.dtype)
        return scores, F.mse_loss(scores, targets)
