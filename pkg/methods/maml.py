#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Bilevel meta-learning: MAML and ANIL.

Parameters are handled as ordered name -> tensor dicts so adapted copies can
be pushed through the module with torch.func.functional_call while keeping
the graph back to the meta-parameters.

    inner:  theta'_i = theta - alpha * grad L_Ti(f_theta)          (repeated `steps` times)
    outer:  theta   <- theta - beta * grad sum_i L_Ti(f_theta'_i)
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.func import functional_call

from models.conv64f import global_embed
from methods.base import FewShotMethod
from sar_data.episode_sampler import EpisodeBatch, EpisodeSpec, episode_seed, sample_episode
from utils.errors import ConfigurationError, DivergedInnerLoopError, DivergedOuterLoopError

logger = logging.getLogger(__name__)

Params = Dict[str, torch.Tensor]
LossFn = Callable[[Params], torch.Tensor]


@dataclass
class MetaTask:
    """One task T_i: support loss drives the inner loop, query loss the outer loop"""
    support_loss: LossFn
    query_loss: LossFn


@dataclass
class TaskBatch:
    """
    Tasks of one outer step with their learning rates

    beta = 0 and steps = 0 are accepted as degenerate settings.
    """
    tasks: List[MetaTask]
    alpha: float = 0.01
    beta: float = 0.001
    inner_steps: int = 5
    first_order: bool = False

    def __post_init__(self):
        if not self.tasks:
            raise ConfigurationError("TaskBatch needs at least one task")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be > 0, got {self.alpha}")
        if self.beta < 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")
        if self.inner_steps < 0:
            raise ConfigurationError(f"inner_steps must be >= 0, got {self.inner_steps}")


def flatten_params(params: Params) -> torch.Tensor:
    """Flat vector view of a parameter dict (insertion order)"""
    return torch.cat([p.reshape(-1) for p in params.values()])


def unflatten_params(flat: torch.Tensor, template: Params) -> Params:
    """Inverse of flatten_params against a shape template"""
    result = OrderedDict()
    offset = 0
    for name, tensor in template.items():
        count = tensor.numel()
        result[name] = flat[offset:offset + count].view_as(tensor)
        offset += count
    if offset != flat.numel():
        raise ConfigurationError(f"Flat vector has {flat.numel()} values, template needs {offset}")
    return result


def inner_adapt(params: Params, loss_fn: LossFn, alpha: float, steps: int,
                first_order: bool = False, trainable: Optional[Sequence[str]] = None) -> Params:
    """
    Task adaptation by `steps` plain gradient steps

    Args:
        params: Meta-parameters (must require grad)
        loss_fn: Support loss as a function of a parameter dict
        alpha: Inner learning rate
        steps: Number of gradient steps
        first_order: Drop second-order terms (gradients are not differentiated)
        trainable: Names updated by the loop, all by default

    Returns:
        Adapted parameter dict; untouched entries are the same tensors as in params
    """
    adapted = OrderedDict(params)
    names = list(adapted) if trainable is None else list(trainable)
    for step in range(steps):
        loss = loss_fn(adapted)
        grads = torch.autograd.grad(loss, [adapted[n] for n in names],
                                    create_graph=not first_order, allow_unused=True)
        for name, grad in zip(names, grads):
            if grad is None:
                continue
            if not torch.all(torch.isfinite(grad)):
                raise DivergedInnerLoopError(
                    "Inner loop produced a non-finite gradient",
                    diagnostics={'step': step, 'parameter': name, 'loss': float(loss.detach())},
                )
            adapted[name] = adapted[name] - alpha * grad
    return adapted


def anil_adapt(params: Params, loss_fn: LossFn, alpha: float, steps: int,
               head_names: Sequence[str], first_order: bool = False) -> Params:
    """Inner loop over the head only; body tensors are passed through unchanged"""
    return inner_adapt(params, loss_fn, alpha, steps, first_order=first_order, trainable=head_names)


def meta_gradient(params: Params, batch: TaskBatch,
                  adapt: Optional[Callable[..., Params]] = None) -> Tuple[torch.Tensor, Params]:
    """
    Gradient of sum_i L_Ti(f_theta'_i) with respect to the meta-parameters

    Args:
        params: Meta-parameters (leaf tensors requiring grad)
        batch: Tasks and inner-loop settings
        adapt: inner_adapt-compatible callable; defaults to inner_adapt

    Returns:
        (meta loss, gradient dict aligned with params)
    """
    adapt = adapt or inner_adapt
    total = None
    for task in batch.tasks:
        adapted = adapt(params, task.support_loss, batch.alpha, batch.inner_steps,
                        first_order=batch.first_order)
        loss = task.query_loss(adapted)
        total = loss if total is None else total + loss

    grads = torch.autograd.grad(total, list(params.values()), allow_unused=True)
    result = OrderedDict()
    for (name, tensor), grad in zip(params.items(), grads):
        grad = torch.zeros_like(tensor) if grad is None else grad
        if not torch.all(torch.isfinite(grad)):
            raise DivergedOuterLoopError(
                "Meta-gradient is non-finite",
                diagnostics={'parameter': name, 'meta_loss': float(total.detach())},
            )
        result[name] = grad
    return total, result


def outer_update(params: Params, batch: TaskBatch,
                 adapt: Optional[Callable[..., Params]] = None) -> Params:
    """
    theta <- theta - beta * meta-gradient

    Returns:
        New leaf parameter dict (requires grad)
    """
    _, grads = meta_gradient(params, batch, adapt=adapt)
    return OrderedDict(
        (name, (tensor - batch.beta * grads[name]).detach().requires_grad_(True))
        for name, tensor in params.items()
    )


class MAML(FewShotMethod):
    """Conv64F + linear head meta-learned through the full inner loop"""

    name = 'MAML'
    category = 'meta'
    default_pooling = 'pool4'
    DEFAULT_HPARAMS = {
        'alpha': 0.01,
        'inner_steps': 5,
        'eval_inner_steps': 10,
        'first_order': False,
        'meta_batch_size': 1,
    }

    def __init__(self, n_way: int = 5, backbone_config=None, hparams=None):
        super().__init__(n_way=n_way, backbone_config=backbone_config, hparams=hparams)
        self.head = nn.Linear(self.backbone_config.embedding_dim(), self.n_way)

    def backbone_kwargs(self) -> Dict:
        # batch statistics inside inner loops; running stats are ill-defined under adapted weights
        return {'track_running_stats': False}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(global_embed(self.backbone(x)))

    def adapted_names(self) -> Optional[List[str]]:
        """Parameters the inner loop updates (all of them for MAML)"""
        return None

    def meta_params(self) -> Params:
        return OrderedDict(self.named_parameters())

    def functional_forward(self, params: Params, x: torch.Tensor) -> torch.Tensor:
        return functional_call(self, params, (x,))

    def adapt(self, params: Params, loss_fn: LossFn, alpha: float, steps: int,
              first_order: bool = False) -> Params:
        return inner_adapt(params, loss_fn, alpha, steps, first_order=first_order,
                           trainable=self.adapted_names())

    def _check_way(self, batch: EpisodeBatch) -> None:
        if batch.n_way != self.n_way:
            raise ConfigurationError(f"{self.name} head was built for {self.n_way}-way episodes, got {batch.n_way}-way")

    def make_task(self, batch: EpisodeBatch, record: Optional[List] = None) -> MetaTask:
        def support_loss(params: Params) -> torch.Tensor:
            return F.cross_entropy(self.functional_forward(params, batch.support_x), batch.support_y)

        def query_loss(params: Params) -> torch.Tensor:
            logits = self.functional_forward(params, batch.query_x)
            if record is not None:
                record.append((logits.detach(), batch.query_y))
            return F.cross_entropy(logits, batch.query_y)

        return MetaTask(support_loss=support_loss, query_loss=query_loss)

    def set_forward(self, batch: EpisodeBatch) -> torch.Tensor:
        """Adapt on the support set, return query logits of the adapted model"""
        self._check_way(batch)
        steps = int(self.hparams['inner_steps'] if self.training else self.hparams['eval_inner_steps'])
        first_order = bool(self.hparams['first_order']) or not self.training
        with torch.enable_grad():
            params = self.meta_params()
            if not self.training:
                params = OrderedDict((n, p.detach().requires_grad_(True)) for n, p in params.items())
            task = self.make_task(batch)
            adapted = self.adapt(params, task.support_loss, float(self.hparams['alpha']), steps,
                                 first_order=first_order)
            logits = self.functional_forward(adapted, batch.query_x)
        return logits if self.training else logits.detach()

    def predict(self, batch: EpisodeBatch) -> torch.Tensor:
        self.eval()
        return self.set_forward(batch.to(self.device)).argmax(dim=1)

    def train_epoch(self, train_part, spec: EpisodeSpec, episodes: int, seed: int, epoch: int,
                    optimizer: torch.optim.Optimizer) -> List[Dict]:
        """Outer loop: each step meta-updates over meta_batch_size sampled tasks"""
        self.train()
        rng = episode_seed(seed, epoch)
        alpha = float(self.hparams['alpha'])
        meta_batch = int(self.hparams['meta_batch_size'])
        logs = []
        last_loss = None
        for step in range(episodes):
            record: List = []
            tasks = []
            for _ in range(meta_batch):
                batch = sample_episode(train_part, spec, rng).to_batch().to(self.device)
                self._check_way(batch)
                tasks.append(self.make_task(batch, record))
            task_batch = TaskBatch(tasks=tasks, alpha=alpha, beta=optimizer.param_groups[0]['lr'],
                                   inner_steps=int(self.hparams['inner_steps']),
                                   first_order=bool(self.hparams['first_order']))
            params = self.meta_params()
            meta_loss, grads = meta_gradient(params, task_batch, adapt=self.adapt)
            loss = meta_loss / meta_batch
            last_loss = self.check_finite(loss, epoch, step, last_loss)

            optimizer.zero_grad()
            for name, parameter in params.items():
                parameter.grad = grads[name] / meta_batch
            optimizer.step()

            correct = sum(int((logits.argmax(dim=1) == y).sum()) for logits, y in record)
            total = sum(int(y.numel()) for _, y in record)
            logs.append({'epoch': epoch, 'step': step, 'loss': last_loss, 'accuracy': correct / max(total, 1)})
        return logs


class ANIL(MAML):
    """MAML whose inner loop adapts only the head; the outer loop still updates everything"""

    name = 'ANIL'

    def adapted_names(self) -> List[str]:
        return [name for name, _ in self.named_parameters() if name.startswith('head.')]
