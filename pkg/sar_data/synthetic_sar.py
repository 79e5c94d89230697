#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Desk-scale SAR-like dataset generator.

Each class is a geometric target template (a rotated vehicle body with a few
bright point scatterers over a low clutter floor). Every image is the class
template multiplied by fully developed speckle, modelled as gamma noise with
shape L and scale 1/L (mean 1, variance 1/L), then min-max normalized like an
ingested MSTAR chip.
"""

import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Mapping, Optional

import numpy as np
import yaml

from sar_data.chips import CHIP_SIZE, ImageChip, SARDataset
from sar_data.mstar_reader import normalize_min_max
from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

CLUTTER_FLOOR = 0.05
EDGE_SOFTNESS = 1.5
SCATTERER_SIGMA = 1.5


@dataclass
class SynthConfig:
    """Generator settings"""
    n_classes: int = 10
    images_per_class: int = 200
    speckle_looks: float = 4.0
    template_separation: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.images_per_class < 1:
            raise ConfigurationError("n_classes and images_per_class must be at least 1")
        if not self.speckle_looks > 0:
            raise ConfigurationError(f"speckle_looks must be > 0, got {self.speckle_looks}")
        if not 0.0 <= self.template_separation <= 1.0:
            raise ConfigurationError(
                f"template_separation must be in [0, 1], got {self.template_separation}"
            )

    def to_dict(self) -> Dict:
        return asdict(self)


def load_synth_config(path: str, overrides: Optional[Mapping] = None) -> SynthConfig:
    """
    Read generator settings from YAML

    The file holds SynthConfig keys, either at the top level or under a
    `synthetic:` section. Unknown keys are rejected.

    Args:
        path: YAML file
        overrides: Values that replace the file's (None entries are ignored)

    Returns:
        SynthConfig
    """
    with open(path, 'r', encoding='utf-8') as f:
        try:
            payload = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"{path} is not valid YAML: {e}")
    if not isinstance(payload, dict):
        raise ConfigurationError(f"{path} must hold a mapping of generator settings")
    if set(payload) == {'synthetic'}:
        payload = payload['synthetic'] or {}
    allowed = {f.name for f in fields(SynthConfig)}
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in {path}: {unknown}. Allowed: {sorted(allowed)}")
    settings = dict(payload)
    settings.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return SynthConfig(**settings)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _target_template(rng: np.random.Generator, class_index: int, n_classes: int) -> np.ndarray:
    center = (CHIP_SIZE - 1) / 2.0
    yy, xx = np.mgrid[0:CHIP_SIZE, 0:CHIP_SIZE].astype(np.float64) - center

    angle = np.pi * class_index / n_classes + rng.uniform(-0.1, 0.1)
    length = rng.uniform(18.0, 32.0)
    width = rng.uniform(6.0, 13.0)
    u = xx * np.cos(angle) + yy * np.sin(angle)
    v = -xx * np.sin(angle) + yy * np.cos(angle)
    body = 0.55 * _sigmoid((length / 2 - np.abs(u)) / EDGE_SOFTNESS) \
        * _sigmoid((width / 2 - np.abs(v)) / EDGE_SOFTNESS)

    template = body
    for _ in range(3 + class_index % 3):
        su = rng.uniform(-length / 2, length / 2)
        sv = rng.uniform(-width / 2, width / 2)
        amplitude = rng.uniform(0.6, 1.0)
        template = template + amplitude * np.exp(
            -((u - su) ** 2 + (v - sv) ** 2) / (2 * SCATTERER_SIGMA ** 2)
        )
    return template


def render_class_templates(config: SynthConfig) -> np.ndarray:
    """
    Noise-free class templates

    template_separation blends each class-specific template with the mean
    template: 0 makes every class identical, 1 keeps them fully distinct.

    Returns:
        np.ndarray: (n_classes, 84, 84) values in [CLUTTER_FLOOR, 1]
    """
    rng = np.random.default_rng(config.rng_seed)
    specific = np.stack([
        _target_template(rng, k, config.n_classes) for k in range(config.n_classes)
    ])
    common = specific.mean(axis=0, keepdims=True)
    blended = common + config.template_separation * (specific - common)

    peaks = blended.reshape(config.n_classes, -1).max(axis=1).reshape(-1, 1, 1)
    return CLUTTER_FLOOR + (1.0 - CLUTTER_FLOOR) * blended / peaks


def sample_speckle(shape, looks: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative speckle: Gamma(shape=L, scale=1/L), mean 1 and variance 1/L"""
    return rng.gamma(shape=looks, scale=1.0 / looks, size=shape)


def generate_synthetic(config: SynthConfig) -> SARDataset:
    """
    Build a class -> chips dataset from the generator config

    Deterministic given config.rng_seed.
    """
    templates = render_class_templates(config)
    # speckle draws use a stream independent of template geometry
    rng = np.random.default_rng([config.rng_seed, 1])

    class_names = [f"class_{k:02d}" for k in range(config.n_classes)]
    chips: Dict[int, List[ImageChip]] = {}
    for class_id in range(config.n_classes):
        class_chips = []
        for index in range(config.images_per_class):
            intensity = templates[class_id] * sample_speckle(templates[class_id].shape,
                                                             config.speckle_looks, rng)
            pixels, degenerate = normalize_min_max(intensity)
            class_chips.append(ImageChip(
                pixels=pixels,
                class_id=class_id,
                source_id=f"synth-s{config.rng_seed}-c{class_id:02d}-{index:05d}",
                degenerate_range=degenerate,
            ))
        chips[class_id] = class_chips

    logger.info(
        f"Generated synthetic dataset: {config.n_classes} classes x {config.images_per_class} "
        f"images, looks={config.speckle_looks}, separation={config.template_separation}"
    )
    return SARDataset(class_names=class_names, chips=chips)
