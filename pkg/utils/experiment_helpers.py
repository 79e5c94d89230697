#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Seeding, hashing, hardware and statistics helpers shared by the harness.
"""

import hashlib
import json
import logging
import os
import platform
import random
from typing import Dict, Sequence, Tuple

import numpy as np
import torch

logger = logging.getLogger(__name__)

CI_Z_95 = 1.96


def seed_everything(seed: int) -> None:
    """
    Seed every random source the benchmark touches

    Args:
        seed: Seed shared by python, numpy and torch
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if torch.cuda.is_available():
        torch.cuda.manual_seed_all(seed)


def configure_torch_from_env() -> torch.device:
    """
    Apply FEWSAR_NUM_THREADS / FEWSAR_DEVICE from the environment

    Returns:
        torch.device: Device named by FEWSAR_DEVICE (cpu by default)
    """
    threads = os.getenv('FEWSAR_NUM_THREADS')
    if threads:
        torch.set_num_threads(int(threads))
    device_name = os.getenv('FEWSAR_DEVICE', 'cpu')
    if device_name.startswith('cuda') and not torch.cuda.is_available():
        logger.warning(f"FEWSAR_DEVICE={device_name} requested but CUDA is unavailable, using cpu")
        device_name = 'cpu'
    return torch.device(device_name)


def canonical_json(payload: Dict) -> str:
    """JSON with sorted keys and no whitespace variation"""
    return json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)


def config_digest(payload: Dict, length: int = 16) -> str:
    """
    Short SHA-256 digest of a configuration dictionary

    Args:
        payload: Fully-resolved configuration
        length: Number of hex characters to keep

    Returns:
        str: Hex digest prefix
    """
    return hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()[:length]


def hardware_descriptor(device: torch.device = None) -> Dict[str, str]:
    """Describe the machine a run executed on (runtimes are only comparable per machine)"""
    descriptor = {
        'platform': platform.platform(),
        'processor': platform.processor() or platform.machine(),
        'python': platform.python_version(),
        'torch': torch.__version__,
        'threads': str(torch.get_num_threads()),
        'device': str(device or 'cpu'),
    }
    if device is not None and device.type == 'cuda':
        descriptor['gpu'] = torch.cuda.get_device_name(device)
    return descriptor


def summarize_accuracies(accuracies: Sequence[float]) -> Tuple[float, float]:
    """
    Mean episode accuracy and 95% confidence half-width, both in percent

    Args:
        accuracies: Per-episode accuracies in [0, 1]

    Returns:
        (mean %, 1.96 * std / sqrt(n) %)
    """
    values = np.asarray(accuracies, dtype=np.float64)
    if values.size == 0:
        return 0.0, 0.0
    mean = float(values.mean()) * 100.0
    ci = CI_Z_95 * float(values.std()) / np.sqrt(values.size) * 100.0
    return mean, ci
