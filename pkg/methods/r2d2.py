#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
R2D2: a closed-form ridge-regression head fitted per episode.

    W = X^T (X X^T + lambda I_n)^-1 Y

The dual (Woodbury) form solves an n x n system, n = n_way * k_shot, instead
of d x d with d = 1600. The solve is differentiable so the backbone is
meta-trained through it; lambda, a score scale and a score bias are learned.
"""

import math
from typing import Dict, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from models.conv64f import global_embed
from methods.base import FewShotMethod
from sar_data.episode_sampler import EpisodeBatch
from utils.errors import ParameterError, SingularSolveError


def r2d2_head(X: torch.Tensor, Y: torch.Tensor, lam: Union[float, torch.Tensor]) -> torch.Tensor:
    """
    Ridge regression weights in dual form

    Args:
        X: (n, d) support embeddings
        Y: (n, c) one-hot targets
        lam: Regularization lambda >= 0 (float or 0-dim tensor)

    Returns:
        (d, c) weights
    """
    if X.dim() != 2 or Y.dim() != 2 or X.shape[0] != Y.shape[0] or X.shape[0] < 1:
        raise ParameterError(f"X must be (n, d) and Y (n, c) with n >= 1, got {tuple(X.shape)} and {tuple(Y.shape)}")
    lam_value = float(lam.detach()) if torch.is_tensor(lam) else float(lam)
    if lam_value < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam_value}")

    n = X.shape[0]
    gram = X @ X.t() + lam * torch.eye(n, dtype=X.dtype, device=X.device)
    if lam_value == 0 and int(torch.linalg.matrix_rank(gram.detach())) < n:
        raise SingularSolveError("X X^T is singular at lambda = 0; use lambda > 0")
    try:
        dual = torch.linalg.solve(gram, Y.to(X.dtype))
    except RuntimeError as e:
        raise SingularSolveError(f"Ridge system could not be solved ({e}); use lambda > 0")
    if not torch.all(torch.isfinite(dual)):
        raise SingularSolveError("Ridge solve produced non-finite values; use lambda > 0")
    return X.t() @ dual


class R2D2(FewShotMethod):
    """Conv64F embeddings + per-episode ridge head with learned lambda / scale / bias"""

    name = 'R2D2'
    category = 'meta'
    default_pooling = 'pool4'
    DEFAULT_HPARAMS = {
        'lambda_init': 50.0,
        'scale_init': 1.0,
        'bias_init': 0.0,
    }

    def __init__(self, n_way: int = 5, backbone_config=None, hparams=None):
        super().__init__(n_way=n_way, backbone_config=backbone_config, hparams=hparams)
        if not self.hparams['lambda_init'] > 0:
            raise ParameterError("lambda_init must be > 0")
        self.log_lambda = nn.Parameter(torch.tensor(math.log(float(self.hparams['lambda_init']))))
        self.scale = nn.Parameter(torch.tensor(float(self.hparams['scale_init'])))
        self.bias = nn.Parameter(torch.tensor(float(self.hparams['bias_init'])))

    @property
    def ridge_lambda(self) -> torch.Tensor:
        return self.log_lambda.exp()

    def set_forward(self, batch: EpisodeBatch) -> torch.Tensor:
        support_maps, query_maps = self.split_embed(batch)
        support = global_embed(support_maps)
        query = global_embed(query_maps)
        targets = F.one_hot(batch.support_y, batch.n_way).to(support.dtype)
        weights = r2d2_head(support, targets, self.ridge_lambda)
        return self.scale * (query @ weights) + self.bias
