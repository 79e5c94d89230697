#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Chip and dataset containers plus the on-disk dataset layout.

Layout: one subdirectory per class, one `.npy` array per chip (the portable
container: numpy's shape header followed by row-major values) and a
`manifest.json` describing classes, counts and per-chip metadata.
"""

import json
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from utils.errors import InvalidChipError

logger = logging.getLogger(__name__)

CHIP_SIZE = 84
MANIFEST_NAME = "manifest.json"


@dataclass
class ImageChip:
    """One 84x84 normalized magnitude image"""
    pixels: np.ndarray
    class_id: int
    source_id: str
    depression_deg: Optional[float] = None
    degenerate_range: bool = False

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.shape != (CHIP_SIZE, CHIP_SIZE):
            raise InvalidChipError(
                f"Chip {self.source_id} has shape {self.pixels.shape}, expected {(CHIP_SIZE, CHIP_SIZE)}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise InvalidChipError(f"Chip {self.source_id} contains non-finite values")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise InvalidChipError(f"Chip {self.source_id} has values outside [0, 1]")


@dataclass
class SARDataset:
    """Class-indexed chip collection; class_id is the index into class_names"""
    class_names: List[str]
    chips: Dict[int, List[ImageChip]] = field(default_factory=dict)

    def __post_init__(self):
        for class_id, class_chips in self.chips.items():
            if not 0 <= class_id < len(self.class_names):
                raise InvalidChipError(f"Class id {class_id} is not in the dataset's class list")
            for chip in class_chips:
                if chip.class_id != class_id:
                    raise InvalidChipError(
                        f"Chip {chip.source_id} labelled {chip.class_id} stored under class {class_id}"
                    )

    @property
    def class_ids(self) -> List[int]:
        return list(range(len(self.class_names)))

    def counts(self) -> Dict[str, int]:
        return {self.class_names[c]: len(self.chips.get(c, [])) for c in self.class_ids}

    def subset(self, class_ids) -> Dict[int, List[ImageChip]]:
        """class -> chips map restricted to the given classes"""
        return {c: self.chips.get(c, []) for c in sorted(class_ids)}


def _safe_file_stem(source_id: str) -> str:
    return re.sub(r'[^A-Za-z0-9_.-]+', '_', source_id).strip('_') or 'chip'


def save_dataset(dataset: SARDataset, out_dir: str, extra_manifest: Optional[Mapping] = None) -> Dict:
    """
    Write a dataset in the class-subdirectory layout

    Args:
        dataset: Dataset to persist
        out_dir: Target directory (created if missing)
        extra_manifest: Additional keys merged into manifest.json (e.g. generator config)

    Returns:
        dict: The manifest that was written
    """
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for class_id in dataset.class_ids:
        class_name = dataset.class_names[class_id]
        class_dir = os.path.join(out_dir, class_name)
        os.makedirs(class_dir, exist_ok=True)
        used = set()
        for index, chip in enumerate(dataset.chips.get(class_id, [])):
            stem = _safe_file_stem(chip.source_id)
            if stem in used:
                stem = f"{stem}_{index}"
            used.add(stem)
            file_name = f"{stem}.npy"
            np.save(os.path.join(class_dir, file_name), chip.pixels)
            records.append({
                'file': f"{class_name}/{file_name}",
                'class_id': class_id,
                'source_id': chip.source_id,
                'depression_deg': chip.depression_deg,
                'degenerate_range': chip.degenerate_range,
            })

    manifest = {
        'class_names': dataset.class_names,
        'counts': dataset.counts(),
        'chips': records,
    }
    if extra_manifest:
        manifest.update(dict(extra_manifest))

    with open(os.path.join(out_dir, MANIFEST_NAME), 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False)
    logger.info(f"Saved {len(records)} chips in {len(dataset.class_names)} classes to {out_dir}")
    return manifest


def load_dataset(data_dir: str) -> SARDataset:
    """
    Load a dataset directory

    A directory with manifest.json is read through the manifest; otherwise
    every class subdirectory is scanned and each file goes through load_chip.

    Args:
        data_dir: Dataset root

    Returns:
        SARDataset
    """
    manifest_path = os.path.join(data_dir, MANIFEST_NAME)
    if os.path.exists(manifest_path):
        with open(manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
        class_names = list(manifest['class_names'])
        chips: Dict[int, List[ImageChip]] = {c: [] for c in range(len(class_names))}
        for record in manifest['chips']:
            pixels = np.load(os.path.join(data_dir, record['file']), allow_pickle=False)
            chips[record['class_id']].append(ImageChip(
                pixels=pixels,
                class_id=record['class_id'],
                source_id=record['source_id'],
                depression_deg=record.get('depression_deg'),
                degenerate_range=record.get('degenerate_range', False),
            ))
        dataset = SARDataset(class_names=class_names, chips=chips)
    else:
        from sar_data.mstar_reader import scan_class_directories
        dataset = scan_class_directories(data_dir)

    logger.info(f"Loaded dataset from {data_dir}: {dataset.counts()}")
    return dataset


def chips_to_array(chips: Sequence[ImageChip]) -> np.ndarray:
    """Stack chips into an (n, 1, 84, 84) float32 array"""
    if not chips:
        return np.zeros((0, 1, CHIP_SIZE, CHIP_SIZE), dtype=np.float32)
    return np.stack([chip.pixels for chip in chips])[:, None, :, :]
