#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Conv64F backbone: four conv(3x3, 64) -> batch-norm -> ReLU blocks.

pool4 max-pools after every block (84 -> 42 -> 21 -> 10 -> 5) and feeds the
global-embedding methods; pool2 pools after the first two blocks only
(84 -> 42 -> 21) and keeps a 21x21 grid of local descriptors.
"""

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from sar_data.chips import ImageChip, chips_to_array
from utils.errors import ConfigurationError

POOLING_SCHEDULES = ('pool4', 'pool2')
POOLED_BLOCKS = {'pool4': None, 'pool2': 2}


@dataclass
class Conv64FConfig:
    n_blocks: int = 4
    filters: int = 64
    in_channels: int = 1
    pooling: str = 'pool4'

    def __post_init__(self):
        if self.pooling not in POOLING_SCHEDULES:
            raise ConfigurationError(f"pooling must be one of {POOLING_SCHEDULES}, got '{self.pooling}'")
        if self.n_blocks < 1 or self.filters < 1 or self.in_channels < 1:
            raise ConfigurationError("n_blocks, filters and in_channels must be >= 1")

    def pooled(self, block_index: int) -> bool:
        limit = POOLED_BLOCKS[self.pooling]
        return limit is None or block_index < limit

    def output_hw(self, input_hw: Tuple[int, int] = (84, 84)) -> Tuple[int, int]:
        h, w = input_hw
        for block in range(self.n_blocks):
            if self.pooled(block):
                h, w = h // 2, w // 2
        return h, w

    def embedding_dim(self, input_hw: Tuple[int, int] = (84, 84)) -> int:
        h, w = self.output_hw(input_hw)
        return self.filters * h * w

    def to_dict(self) -> Dict:
        return asdict(self)


class Conv64F(nn.Module):
    """Shared feature extractor; forward returns (B, filters, h, w) feature maps"""

    def __init__(self, config: Optional[Conv64FConfig] = None, track_running_stats: bool = True):
        super().__init__()
        self.config = config or Conv64FConfig()
        layers = []
        channels = self.config.in_channels
        for block in range(self.config.n_blocks):
            layers.append(nn.Conv2d(channels, self.config.filters, kernel_size=3, padding=1, bias=False))
            layers.append(nn.BatchNorm2d(self.config.filters, track_running_stats=track_running_stats))
            layers.append(nn.ReLU(inplace=False))
            if self.config.pooled(block):
                layers.append(nn.MaxPool2d(kernel_size=2))
            channels = self.config.filters
        self.features = nn.Sequential(*layers)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode='fan_in', nonlinearity='relu')
            elif isinstance(module, nn.BatchNorm2d):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ConfigurationError(
                f"Expected input of shape (B, {self.config.in_channels}, H, W), got {tuple(x.shape)}"
            )
        return self.features(x)

    def load_weights(self, state_dict: Dict[str, torch.Tensor]) -> None:
        """Load weights after checking every tensor shape against this config"""
        own = self.state_dict()
        missing = sorted(set(own) - set(state_dict))
        unexpected = sorted(set(state_dict) - set(own))
        if missing or unexpected:
            raise ConfigurationError(f"Weights do not match config: missing={missing}, unexpected={unexpected}")
        for name, tensor in state_dict.items():
            if tuple(tensor.shape) != tuple(own[name].shape):
                raise ConfigurationError(
                    f"Weight '{name}' has shape {tuple(tensor.shape)}, config needs {tuple(own[name].shape)}"
                )
        self.load_state_dict(state_dict)


def extract_features(backbone: Conv64F, chips: Sequence[ImageChip], mode: str = 'eval',
                     device: Optional[torch.device] = None) -> torch.Tensor:
    """
    Run the backbone on a batch of chips

    Args:
        backbone: Conv64F instance
        chips: ImageChips (84x84, values in [0, 1])
        mode: 'eval' uses running batch-norm statistics, 'train' uses batch statistics

    Returns:
        torch.Tensor: (n, filters, h, w) feature maps
    """
    if mode not in ('train', 'eval'):
        raise ConfigurationError(f"mode must be 'train' or 'eval', got '{mode}'")
    backbone.train(mode == 'train')
    x = torch.from_numpy(chips_to_array(chips))
    if device is not None:
        x = x.to(device)
    with torch.set_grad_enabled(mode == 'train'):
        return backbone(x)


def global_embed(feature_map: torch.Tensor) -> torch.Tensor:
    """Row-major (C, H, W) flatten; accepts (C, H, W) or (B, C, H, W)"""
    if feature_map.dim() == 3:
        return feature_map.reshape(-1)
    return feature_map.reshape(feature_map.shape[0], -1)


def local_descriptors(feature_map: torch.Tensor) -> torch.Tensor:
    """
    One descriptor per spatial position, row-major over (h, w)

    Returns:
        (h*w, C) for a single map or (B, h*w, C) for a batch
    """
    if feature_map.dim() == 3:
        return feature_map.reshape(feature_map.shape[0], -1).transpose(0, 1)
    return feature_map.reshape(feature_map.shape[0], feature_map.shape[1], -1).transpose(1, 2)
