#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Versioned checkpoint container.

One torch.save'd dict holding the format version, the method name and the
constructor arguments needed to rebuild it, the full state dict, the run
config and seed, plus free-form extras (training log, hardware descriptor).
"""

import logging
import os
from datetime import datetime
from typing import Dict, Mapping, Optional, Tuple

import torch

from methods.base import FewShotMethod
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
REQUIRED_KEYS = ('version', 'method', 'init_kwargs', 'state_dict')


def save_checkpoint(path: str, method: FewShotMethod, run_config: Optional[Mapping] = None,
                    seed: Optional[int] = None, extra: Optional[Mapping] = None) -> str:
    """
    Write a method checkpoint

    Args:
        path: Destination file (parent directories are created)
        method: Trained method
        run_config: Resolved run configuration (stored verbatim)
        seed: Run seed
        extra: Additional picklable payload (training log, timings, ...)

    Returns:
        str: The path written
    """
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    payload = {
        'version': CHECKPOINT_VERSION,
        'method': method.name,
        'category': method.category,
        'init_kwargs': method.init_kwargs(),
        'state_dict': {k: v.detach().cpu() for k, v in method.state_dict().items()},
        'run_config': dict(run_config or {}),
        'seed': seed,
        'saved_at': datetime.now().isoformat(),
        'extra': dict(extra or {}),
    }
    torch.save(payload, path)
    logger.info(f"Saved {method.name} checkpoint to {path}")
    return path


def _check_state_dict(method: FewShotMethod, state_dict: Mapping[str, torch.Tensor]) -> None:
    own = method.state_dict()
    missing = sorted(set(own) - set(state_dict))
    unexpected = sorted(set(state_dict) - set(own))
    if missing or unexpected:
        raise ConfigurationError(
            f"Checkpoint does not match {method.name} config: missing={missing}, unexpected={unexpected}"
        )
    for name, tensor in state_dict.items():
        if tuple(tensor.shape) != tuple(own[name].shape):
            raise ConfigurationError(
                f"Checkpoint tensor '{name}' has shape {tuple(tensor.shape)}, "
                f"config needs {tuple(own[name].shape)}"
            )


def load_checkpoint(path: str, device: Optional[torch.device] = None) -> Tuple[FewShotMethod, Dict]:
    """
    Rebuild a method from a checkpoint

    Returns:
        (method on device, full checkpoint payload)

    Raises:
        ConfigurationError: unknown version, missing fields or shape mismatch
    """
    # registry imports every method module; keep it out of module import time
    from methods.registry import create_method

    payload = torch.load(path, map_location='cpu', weights_only=False)
    if not isinstance(payload, dict) or any(key not in payload for key in REQUIRED_KEYS):
        raise ConfigurationError(f"{path} is not a benchmark checkpoint")
    if payload['version'] != CHECKPOINT_VERSION:
        raise ConfigurationError(
            f"Checkpoint version {payload['version']} is not supported (expected {CHECKPOINT_VERSION})"
        )

    method = create_method(payload['method'], **payload['init_kwargs'])
    _check_state_dict(method, payload['state_dict'])
    method.load_state_dict(payload['state_dict'])
    if device is not None:
        method.to(device)
    method.eval()
    return method, payload
