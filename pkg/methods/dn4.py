#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
DN4: image-to-class measure over deep local descriptors.

Each query descriptor finds its k most cosine-similar descriptors in a
class's pooled support descriptors; the class score sums those top-k
similarities over all query descriptors.
"""

import torch
import torch.nn.functional as F

from models.conv64f import local_descriptors
from methods.base import FewShotMethod, group_by_label
from sar_data.episode_sampler import EpisodeBatch
from utils.errors import ParameterError

QUERY_CHUNK = 8


def pool_class_descriptors(support_maps: torch.Tensor, support_labels: torch.Tensor,
                           n_way: int) -> torch.Tensor:
    """(n_way, k_shot * h * w, C) pooled support descriptors per class"""
    descriptors = local_descriptors(support_maps)
    per_class = group_by_label(descriptors, support_labels, n_way)
    return torch.stack([d.reshape(-1, d.shape[-1]) for d in per_class])


def class_similarities(query_desc: torch.Tensor, support_desc: torch.Tensor) -> torch.Tensor:
    """Cosine similarities (n_query, n_way, M, S) between query and class descriptors"""
    q = F.normalize(query_desc, dim=-1)
    s = F.normalize(support_desc, dim=-1)
    return torch.einsum('qmd,csd->qcms', q, s)


def dn4_scores(query_desc: torch.Tensor, support_desc: torch.Tensor, k: int = 3) -> torch.Tensor:
    """
    Args:
        query_desc: (n_query, M, d) query descriptors
        support_desc: (n_way, S, d) pooled support descriptors per class
        k: neighbours per query descriptor

    Returns:
        (n_query, n_way) image-to-class scores
    """
    if not 1 <= k <= support_desc.shape[1]:
        raise ParameterError(f"k={k} must be between 1 and the per-class descriptor count {support_desc.shape[1]}")
    scores = []
    for start in range(0, query_desc.shape[0], QUERY_CHUNK):
        sims = class_similarities(query_desc[start:start + QUERY_CHUNK], support_desc)
        scores.append(sims.topk(k, dim=-1).values.sum(dim=(-1, -2)))
    return torch.cat(scores, dim=0)


class DN4(FewShotMethod):
    name = 'DN4'
    category = 'metric'
    default_pooling = 'pool2'
    DEFAULT_HPARAMS = {'k_neighbors': 3}

    def set_forward(self, batch: EpisodeBatch) -> torch.Tensor:
        support_maps, query_maps = self.split_embed(batch)
        support_desc = pool_class_descriptors(support_maps, batch.support_y, batch.n_way)
        return dn4_scores(local_descriptors(query_maps), support_desc, int(self.hparams['k_neighbors']))
