#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
ATL_Net: adaptive per-descriptor thresholds over local descriptors.

For query descriptor L_i, a small network predicts V = sigmoid(F(L_i)).
Each class contributes its best cosine similarity to L_i, weighted by a soft
gate sigmoid(tau * (sim - V)) (or the hard gate sim > V at evaluation when
enabled). Class score = sum over descriptors of gate * sim.
"""

import torch
import torch.nn as nn

from models.conv64f import local_descriptors
from methods.base import FewShotMethod
from methods.dn4 import QUERY_CHUNK, class_similarities, pool_class_descriptors
from sar_data.episode_sampler import EpisodeBatch

DEFAULT_TAU = 25.0


class ThresholdNet(nn.Module):
    """Two-layer perceptron F followed by a logistic squashing"""

    def __init__(self, dim: int = 64, hidden: int = 32):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def logits(self, descriptors: torch.Tensor) -> torch.Tensor:
        return self.mlp(descriptors).squeeze(-1)

    def forward(self, descriptors: torch.Tensor) -> torch.Tensor:
        """(..., d) descriptors -> (...) thresholds in (0, 1)"""
        return torch.sigmoid(self.logits(descriptors))


def gated_similarity_sum(similarities: torch.Tensor, thresholds: torch.Tensor,
                         tau: float = DEFAULT_TAU, hard: bool = False) -> torch.Tensor:
    """
    Sum over the last axis of gate(sim, V) * sim

    Args:
        similarities: (..., M) best similarity per query descriptor
        thresholds: broadcastable (..., M) thresholds V
        tau: soft-gate sharpness
        hard: use the indicator sim > V instead of the logistic gate
    """
    if hard:
        gate = (similarities > thresholds).to(similarities.dtype)
    else:
        gate = torch.sigmoid(tau * (similarities - thresholds))
    return (gate * similarities).sum(dim=-1)


def best_class_similarities(query_desc: torch.Tensor, support_desc: torch.Tensor) -> torch.Tensor:
    """(n_query, n_way, M) max cosine similarity of each query descriptor to each class"""
    chunks = []
    for start in range(0, query_desc.shape[0], QUERY_CHUNK):
        sims = class_similarities(query_desc[start:start + QUERY_CHUNK], support_desc)
        chunks.append(sims.max(dim=-1).values)
    return torch.cat(chunks, dim=0)


def atl_scores(query_desc: torch.Tensor, support_desc: torch.Tensor, tnet: ThresholdNet,
               tau: float = DEFAULT_TAU, hard: bool = False) -> torch.Tensor:
    """
    Args:
        query_desc: (n_query, M, d)
        support_desc: (n_way, S, d)
        tnet: threshold network

    Returns:
        (n_query, n_way) gated similarity sums
    """
    similarities = best_class_similarities(query_desc, support_desc)
    thresholds = tnet(query_desc).unsqueeze(1)
    return gated_similarity_sum(similarities, thresholds, tau=tau, hard=hard)


class ATLNet(FewShotMethod):
    name = 'ATL_Net'
    category = 'metric'
    default_pooling = 'pool2'
    DEFAULT_HPARAMS = {
        'tau': DEFAULT_TAU,
        'threshold_hidden': 32,
        'hard_gate_eval': False,
    }

    def __init__(self, n_way: int = 5, backbone_config=None, hparams=None):
        super().__init__(n_way=n_way, backbone_config=backbone_config, hparams=hparams)
        self.threshold_net = ThresholdNet(self.backbone_config.filters, int(self.hparams['threshold_hidden']))

    def set_forward(self, batch: EpisodeBatch) -> torch.Tensor:
        support_maps, query_maps = self.split_embed(batch)
        support_desc = pool_class_descriptors(support_maps, batch.support_y, batch.n_way)
        hard = bool(self.hparams['hard_gate_eval']) and not self.training
        return atl_scores(local_descriptors(query_maps), support_desc, self.threshold_net,
                          tau=float(self.hparams['tau']), hard=hard)
