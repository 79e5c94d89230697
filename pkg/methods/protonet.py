#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import torch

from models.conv64f import global_embed
from methods.base import FewShotMethod
from sar_data.episode_sampler import EpisodeBatch


def compute_prototypes(support: torch.Tensor, support_labels: torch.Tensor, n_way: int) -> torch.Tensor:
    """Per-class mean of support embeddings, (n_way, d) ordered by local label"""
    one_hot = torch.nn.functional.one_hot(support_labels, n_way).to(support.dtype)
    counts = one_hot.sum(dim=0).clamp_min(1.0)
    return (one_hot.t() @ support) / counts[:, None]


def proto_scores(support: torch.Tensor, support_labels: torch.Tensor, query: torch.Tensor,
                 n_way: int) -> torch.Tensor:
    """score_k = -||q - c_k||^2 for every query row, shape (n_query, n_way)"""
    prototypes = compute_prototypes(support, support_labels, n_way)
    diff = query.unsqueeze(1) - prototypes.unsqueeze(0)
    return -(diff ** 2).sum(dim=2)


class ProtoNet(FewShotMethod):
    """Nearest class-mean classifier in the flattened Conv64F embedding space"""

    name = 'ProtoNet'
    category = 'metric'
    default_pooling = 'pool4'

    def set_forward(self, batch: EpisodeBatch) -> torch.Tensor:
        support_maps, query_maps = self.split_embed(batch)
        return proto_scores(global_embed(support_maps), batch.support_y,
                            global_embed(query_maps), batch.n_way)
