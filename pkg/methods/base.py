#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Common interface of every benchmarked method.

A method owns its Conv64F backbone plus whatever heads/modules it needs and
exposes:
    set_forward(batch)       -> query logits (n_way * n_query, n_way)
    set_forward_loss(batch)  -> (logits, loss)
    train_epoch(...)         -> per-step training log
    predict(batch)           -> predicted local labels for the query set
"""

import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from models.conv64f import Conv64F, Conv64FConfig
from sar_data.chips import ImageChip
from sar_data.episode_sampler import EpisodeBatch, EpisodeSpec, episode_seed, sample_episode
from utils.errors import ConfigurationError, DivergedTrainingError

logger = logging.getLogger(__name__)


def resolve_hparams(defaults: Mapping, overrides: Optional[Mapping]) -> Dict:
    """Defaults updated with overrides; unknown keys are rejected"""
    resolved = dict(defaults)
    for key, value in (overrides or {}).items():
        if key not in defaults:
            raise ConfigurationError(
                f"Unknown hyperparameter '{key}'. Known: {', '.join(sorted(defaults)) or 'none'}"
            )
        resolved[key] = value
    return resolved


class FewShotMethod(nn.Module):
    """Base class; subclasses set name/category/default_pooling and DEFAULT_HPARAMS"""

    name = 'base'
    category = 'metric'
    default_pooling = 'pool4'
    DEFAULT_HPARAMS: Dict = {}

    def __init__(self, n_way: int = 5, backbone_config=None, hparams: Optional[Mapping] = None,
                 **kwargs):
        super().__init__()
        if kwargs:
            raise ConfigurationError(f"{self.name} got unexpected arguments: {sorted(kwargs)}")
        self.n_way = int(n_way)
        self.hparams = resolve_hparams(self.DEFAULT_HPARAMS, hparams)
        if isinstance(backbone_config, Mapping):
            backbone_config = Conv64FConfig(**backbone_config)
        self.backbone_config = backbone_config or Conv64FConfig(pooling=self.default_pooling)
        self.backbone = Conv64F(self.backbone_config, **self.backbone_kwargs())

    # --- construction -------------------------------------------------------

    def backbone_kwargs(self) -> Dict:
        return {}

    def init_kwargs(self) -> Dict:
        """Arguments that rebuild an identically shaped method (stored in checkpoints)"""
        return {
            'n_way': self.n_way,
            'backbone_config': self.backbone_config.to_dict(),
            'hparams': dict(self.hparams),
        }

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    def build_optimizer(self, lr: float) -> torch.optim.Optimizer:
        return torch.optim.Adam(self.parameters(), lr=lr)

    # --- forward ------------------------------------------------------------

    def set_forward(self, batch: EpisodeBatch) -> torch.Tensor:
        raise NotImplementedError(f"{self.name} must implement set_forward")

    def set_forward_loss(self, batch: EpisodeBatch):
        logits = self.set_forward(batch)
        return logits, F.cross_entropy(logits, batch.query_y)

    def predict(self, batch: EpisodeBatch) -> torch.Tensor:
        self.eval()
        with torch.no_grad():
            return self.set_forward(batch.to(self.device)).argmax(dim=1)

    # --- training -----------------------------------------------------------

    def check_finite(self, loss: torch.Tensor, epoch: int, step: int,
                     last_loss: Optional[float] = None) -> float:
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergedTrainingError(
                f"{self.name} training diverged",
                diagnostics={'epoch': epoch, 'step': step, 'loss': value, 'last_finite_loss': last_loss},
            )
        return value

    def train_epoch(self, train_part: Mapping[int, Sequence[ImageChip]], spec: EpisodeSpec,
                    episodes: int, seed: int, epoch: int,
                    optimizer: torch.optim.Optimizer) -> List[Dict]:
        """
        One epoch of episodic training

        Args:
            train_part: class -> chips map of the training classes
            spec: Training episode shape
            episodes: Episodes per epoch
            seed: Run seed (episodes come from the (seed, epoch) stream)
            epoch: Epoch index
            optimizer: Optimizer over self.parameters()

        Returns:
            list of {'epoch', 'step', 'loss', 'accuracy'} records
        """
        self.train()
        rng = episode_seed(seed, epoch)
        logs = []
        last_loss = None
        for step in range(episodes):
            batch = sample_episode(train_part, spec, rng).to_batch().to(self.device)
            logits, loss = self.set_forward_loss(batch)
            last_loss = self.check_finite(loss, epoch, step, last_loss)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            accuracy = (logits.argmax(dim=1) == batch.query_y).float().mean().item()
            logs.append({'epoch': epoch, 'step': step, 'loss': last_loss, 'accuracy': accuracy})
        return logs

    # --- helpers ------------------------------------------------------------

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Feature maps of a batch of images"""
        return self.backbone(x)

    def split_embed(self, batch: EpisodeBatch):
        """Backbone pass over support and query together (one batch-norm batch)"""
        features = self.embed(torch.cat([batch.support_x, batch.query_x], dim=0))
        n_support = batch.support_x.shape[0]
        return features[:n_support], features[n_support:]


def group_by_label(values: torch.Tensor, labels: torch.Tensor, n_way: int) -> List[torch.Tensor]:
    """Split a batch into per-class tensors ordered by local label"""
    return [values[labels == c] for c in range(n_way)]
