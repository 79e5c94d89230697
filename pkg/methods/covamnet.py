#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
CovaMNet: covariance metric between a query's local descriptors and each
class's descriptor distribution.

    Sigma_k = cov(centered support descriptors) + eps * I,  eps = 1e-3 * tr(Sigma_k) / d
    score_k = mean_i  q_i^T Sigma_k q_i,  q_i centered over the query image and unit-normalized
"""

import torch
import torch.nn.functional as F

from models.conv64f import local_descriptors
from methods.base import FewShotMethod
from methods.dn4 import pool_class_descriptors
from sar_data.episode_sampler import EpisodeBatch

EPS_SCALE = 1e-3
EPS_FLOOR = 1e-6


def covariance_matrix(descriptors: torch.Tensor) -> torch.Tensor:
    """Unbiased covariance of (n, d) descriptors; zeros when n < 2"""
    n, d = descriptors.shape
    if n < 2:
        return torch.zeros(d, d, dtype=descriptors.dtype, device=descriptors.device)
    centered = descriptors - descriptors.mean(dim=0, keepdim=True)
    cov = centered.t() @ centered / (n - 1)
    return 0.5 * (cov + cov.t())


def class_covariance(descriptors: torch.Tensor, eps_scale: float = EPS_SCALE) -> torch.Tensor:
    """Stabilized class covariance Sigma_k + eps * I"""
    cov = covariance_matrix(descriptors)
    d = cov.shape[0]
    eps = torch.clamp(eps_scale * torch.trace(cov).detach() / d, min=EPS_FLOOR)
    return cov + eps * torch.eye(d, dtype=cov.dtype, device=cov.device)


def cova_scores(support_desc: torch.Tensor, query_desc: torch.Tensor,
                eps_scale: float = EPS_SCALE) -> torch.Tensor:
    """
    Args:
        support_desc: (n_way, S, d) pooled support descriptors per class
        query_desc: (n_query, M, d) query descriptors

    Returns:
        (n_query, n_way) mean normalized quadratic forms
    """
    covariances = torch.stack([class_covariance(s, eps_scale) for s in support_desc])
    centered = query_desc - query_desc.mean(dim=1, keepdim=True)
    q = F.normalize(centered, dim=-1, eps=1e-12)
    quad = torch.einsum('qmd,cde,qme->qcm', q, covariances, q)
    return quad.mean(dim=-1)


class CovaMNet(FewShotMethod):
    name = 'CovaMNet'
    category = 'metric'
    default_pooling = 'pool2'
    DEFAULT_HPARAMS = {'eps_scale': EPS_SCALE}

    def set_forward(self, batch: EpisodeBatch) -> torch.Tensor:
        support_maps, query_maps = self.split_embed(batch)
        support_desc = pool_class_descriptors(support_maps, batch.support_y, batch.n_way)
        return cova_scores(support_desc, local_descriptors(query_maps), float(self.hparams['eps_scale']))
