#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Fine-tuning family: Baseline (linear head with bias) and Baseline++ (cosine head).

Stage one pretrains backbone + head with mini-batch cross-entropy over the
base classes. Stage two freezes the backbone and fits a fresh n_way head on
each episode's support embeddings.
"""

import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from models.conv64f import global_embed
from methods.base import FewShotMethod
from sar_data.chips import ImageChip, chips_to_array
from sar_data.episode_sampler import Episode, EpisodeBatch, EpisodeSpec, episode_seed
from utils.errors import ConfigurationError, EpisodeInvariantError, UndefinedSimilarityError

logger = logging.getLogger(__name__)

HEAD_KINDS = ('linear', 'cosine')


def cosine_scores(feature: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """
    s_j = f.w_j / (|f| |w_j|)

    Args:
        feature: (d,) or (B, d) embeddings
        weight: (d, c) head weights, one column per class

    Returns:
        (c,) or (B, c) scores in [-1, 1]
    """
    single = feature.dim() == 1
    features = feature.unsqueeze(0) if single else feature
    feature_norm = features.norm(dim=1, keepdim=True)
    if torch.any(feature_norm == 0):
        raise UndefinedSimilarityError("Cosine similarity is undefined for a zero feature vector")
    weight_norm = weight.norm(dim=0, keepdim=True)
    if torch.any(weight_norm == 0):
        raise UndefinedSimilarityError("Cosine similarity is undefined for a zero weight vector")
    scores = (features @ weight) / (feature_norm * weight_norm)
    scores = scores.clamp(-1.0, 1.0)
    return scores[0] if single else scores


class LinearHead(nn.Module):
    """W in R^{d x c} plus bias"""

    def __init__(self, dim: int, n_classes: int, bias: bool = True):
        super().__init__()
        bound = 1.0 / np.sqrt(dim)
        self.weight = nn.Parameter(torch.empty(dim, n_classes).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.zeros(n_classes)) if bias else None

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        logits = features @ self.weight
        return logits + self.bias if self.bias is not None else logits


class CosineHead(nn.Module):
    """Weight vectors [w_1, ..., w_c]; logits are scale_factor * cosine scores"""

    def __init__(self, dim: int, n_classes: int, scale_factor: float = 10.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(dim, n_classes) * (1.0 / np.sqrt(dim)))
        self.scale_factor = scale_factor

    def reinitialize_dead_vectors(self) -> int:
        with torch.no_grad():
            dead = self.weight.norm(dim=0) == 0
            count = int(dead.sum())
            if count:
                logger.warning(f"Re-initializing {count} zero cosine weight vector(s)")
                self.weight[:, dead] = torch.randn(self.weight.shape[0], count,
                                                   dtype=self.weight.dtype, device=self.weight.device)
        return count

    def scores(self, features: torch.Tensor) -> torch.Tensor:
        self.reinitialize_dead_vectors()
        return cosine_scores(features, self.weight)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.scale_factor * self.scores(features)


def make_head(head_kind: str, dim: int, n_classes: int, scale_factor: float = 10.0) -> nn.Module:
    if head_kind == 'linear':
        return LinearHead(dim, n_classes, bias=True)
    if head_kind == 'cosine':
        return CosineHead(dim, n_classes, scale_factor=scale_factor)
    raise ConfigurationError(f"head_kind must be one of {HEAD_KINDS}, got '{head_kind}'")


def fit_head(support_embeddings: torch.Tensor, support_labels: torch.Tensor, n_way: int,
             head_kind: str, steps: int = 100, lr: float = 0.01,
             scale_factor: float = 10.0) -> nn.Module:
    """
    Train a fresh n_way head on fixed support embeddings

    Full-support-batch SGD (momentum 0.9, weight decay 1e-3) for `steps` steps.
    """
    embeddings = support_embeddings.detach()
    head = make_head(head_kind, embeddings.shape[1], n_way, scale_factor).to(embeddings.device)
    head = head.to(embeddings.dtype)
    optimizer = torch.optim.SGD(head.parameters(), lr=lr, momentum=0.9, weight_decay=1e-3)
    for _ in range(steps):
        optimizer.zero_grad()
        loss = F.cross_entropy(head(embeddings), support_labels)
        loss.backward()
        optimizer.step()
    return head


def _check_episode_batch(batch: EpisodeBatch) -> None:
    labels = batch.support_y
    if labels.numel() != batch.n_way * batch.k_shot:
        raise EpisodeInvariantError(
            f"Support has {labels.numel()} labels, expected {batch.n_way * batch.k_shot}"
        )
    counts = torch.bincount(labels, minlength=batch.n_way)
    if counts.numel() != batch.n_way or not torch.all(counts == batch.k_shot):
        raise EpisodeInvariantError(f"Support label counts {counts.tolist()} do not match {batch.k_shot}-shot")


def finetune_episode(episode: Union[Episode, EpisodeBatch], backbone: nn.Module, head_kind: str,
                     steps: int = 100, lr: float = 0.01, scale_factor: float = 10.0) -> torch.Tensor:
    """
    Fit a new head on the support set with the backbone frozen

    Args:
        episode: Episode (validated first) or its tensor batch
        backbone: Pretrained Conv64F, left untouched
        head_kind: 'linear' (Baseline) or 'cosine' (Baseline++)

    Returns:
        torch.Tensor: predicted local labels for the query set
    """
    if isinstance(episode, Episode):
        episode.validate()
        batch = episode.to_batch()
    else:
        batch = episode
    _check_episode_batch(batch)

    device = next(backbone.parameters()).device
    batch = batch.to(device)
    was_training = backbone.training
    backbone.eval()
    with torch.no_grad():
        support = global_embed(backbone(batch.support_x))
        query = global_embed(backbone(batch.query_x))
    backbone.train(was_training)

    with torch.enable_grad():
        head = fit_head(support, batch.support_y, batch.n_way, head_kind, steps, lr, scale_factor)
    with torch.no_grad():
        return head(query).argmax(dim=1)


class Baseline(FewShotMethod):
    """Pretrain with a linear classifier, fine-tune a linear head per episode"""

    name = 'Baseline'
    category = 'fine-tuning'
    default_pooling = 'pool4'
    head_kind = 'linear'
    DEFAULT_HPARAMS = {
        'batch_size': 64,
        'finetune_steps': 100,
        'finetune_lr': 0.01,
    }

    def __init__(self, n_way: int = 5, backbone_config=None, hparams=None, n_base_classes: int = 5):
        super().__init__(n_way=n_way, backbone_config=backbone_config, hparams=hparams)
        self.n_base_classes = int(n_base_classes)
        self.head = make_head(self.head_kind, self.backbone_config.embedding_dim(),
                              self.n_base_classes, self.scale_factor)
        self._base_cache = None

    @property
    def scale_factor(self) -> float:
        return float(self.hparams.get('scale_factor', 10.0))

    def init_kwargs(self) -> Dict:
        kwargs = super().init_kwargs()
        kwargs['n_base_classes'] = self.n_base_classes
        return kwargs

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(global_embed(self.backbone(x)))

    def _base_arrays(self, train_part: Mapping[int, Sequence[ImageChip]]) -> Tuple[np.ndarray, np.ndarray]:
        key = id(train_part)
        if self._base_cache is None or self._base_cache[0] != key:
            class_ids = sorted(c for c, chips in train_part.items() if chips)
            if not class_ids:
                raise ConfigurationError("Base split is empty")
            if len(class_ids) != self.n_base_classes:
                raise ConfigurationError(
                    f"Head has {self.n_base_classes} base classes, split has {len(class_ids)}"
                )
            images = np.concatenate([chips_to_array(train_part[c]) for c in class_ids])
            labels = np.concatenate([np.full(len(train_part[c]), i, dtype=np.int64)
                                     for i, c in enumerate(class_ids)])
            self._base_cache = (key, images, labels)
        return self._base_cache[1], self._base_cache[2]

    def train_epoch(self, train_part, spec: EpisodeSpec, episodes: int, seed: int, epoch: int,
                    optimizer: torch.optim.Optimizer) -> List[Dict]:
        """One pass of mini-batch cross-entropy over all base-class chips"""
        images, labels = self._base_arrays(train_part)
        order = episode_seed(seed, epoch).permutation(len(labels))
        batch_size = int(self.hparams['batch_size'])
        self.train()
        logs = []
        last_loss = None
        for step, start in enumerate(range(0, len(order), batch_size)):
            index = order[start:start + batch_size]
            x = torch.from_numpy(images[index]).to(self.device)
            y = torch.from_numpy(labels[index]).to(self.device)
            logits = self(x)
            loss = F.cross_entropy(logits, y)
            last_loss = self.check_finite(loss, epoch, step, last_loss)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            accuracy = (logits.argmax(dim=1) == y).float().mean().item()
            logs.append({'epoch': epoch, 'step': step, 'loss': last_loss, 'accuracy': accuracy})
        return logs

    def set_forward(self, batch: EpisodeBatch) -> torch.Tensor:
        """Query logits of a head fitted on this episode's support set"""
        batch = batch.to(self.device)
        self.backbone.eval()
        with torch.no_grad():
            support = global_embed(self.backbone(batch.support_x))
            query = global_embed(self.backbone(batch.query_x))
        with torch.enable_grad():
            head = fit_head(support, batch.support_y, batch.n_way, self.head_kind,
                            int(self.hparams['finetune_steps']), float(self.hparams['finetune_lr']),
                            self.scale_factor)
        with torch.no_grad():
            return head(query)

    def predict(self, batch: EpisodeBatch) -> torch.Tensor:
        self.eval()
        return finetune_episode(batch, self.backbone, self.head_kind,
                                steps=int(self.hparams['finetune_steps']),
                                lr=float(self.hparams['finetune_lr']),
                                scale_factor=self.scale_factor)


class BaselinePlusPlus(Baseline):
    """Baseline with a bias-free cosine-similarity classifier in both stages"""

    name = 'Baseline++'
    head_kind = 'cosine'
    DEFAULT_HPARAMS = {**Baseline.DEFAULT_HPARAMS, 'scale_factor': 10.0}


def pretrain(base_part: Mapping[int, Sequence[ImageChip]], head_kind: str = 'linear',
             epochs: int = 30, lr: float = 0.001, batch_size: int = 64, seed: int = 0,
             backbone_config=None) -> Tuple[Dict[str, torch.Tensor], nn.Module]:
    """
    Standard mini-batch cross-entropy training over the base classes

    Returns:
        (backbone state_dict, trained head)
    """
    if not base_part or not any(base_part.values()):
        raise ConfigurationError("Base split is empty")
    method_cls = BaselinePlusPlus if head_kind == 'cosine' else Baseline
    if head_kind not in HEAD_KINDS:
        raise ConfigurationError(f"head_kind must be one of {HEAD_KINDS}, got '{head_kind}'")
    torch.manual_seed(seed)
    method = method_cls(n_base_classes=len([c for c, chips in base_part.items() if chips]),
                        backbone_config=backbone_config, hparams={'batch_size': batch_size})
    optimizer = method.build_optimizer(lr)
    for epoch in range(epochs):
        logs = method.train_epoch(base_part, EpisodeSpec(), 0, seed, epoch, optimizer)
        logger.info(f"{method.name} pretrain epoch {epoch}: loss={np.mean([r['loss'] for r in logs]):.4f}")
    return method.backbone.state_dict(), method.head
