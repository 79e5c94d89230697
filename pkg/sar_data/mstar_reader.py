#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
MSTAR chip ingest.

MSTAR files start with a textual Phoenix header block of `key= value` lines
between `[PhoenixHeaderVer..]` and `[EndofPhoenixHeader]`, optionally followed
by a native header of NativeHeaderLength bytes, then big-endian float32
raster data (magnitude block followed by phase block in the public release).
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from sar_data.chips import CHIP_SIZE, ImageChip, SARDataset, save_dataset
from utils.errors import ChipDecodeError, FewSARError, HeaderEncodingError, MalformedHeaderError

logger = logging.getLogger(__name__)

HEADER_START = b'[PhoenixHeader'
HEADER_END = '[EndofPhoenixHeader'
DEFAULT_VERSION = '01.04'

# DataType values understood by decode_raster
MAGNITUDE_PHASE = 'magnitude_phase'
COMPLEX_IQ = 'complex'
MAGNITUDE_ONLY = 'magnitude'
RASTER_TYPES = (MAGNITUDE_PHASE, COMPLEX_IQ, MAGNITUDE_ONLY)


@dataclass
class ChipHeader:
    """Parsed Phoenix header"""
    fields: Dict[str, str] = field(default_factory=dict)
    data_offset: int = 0
    version: str = ''

    def _int_field(self, key: str) -> int:
        if key not in self.fields:
            raise MalformedHeaderError(f"Header is missing required key '{key}'")
        try:
            value = int(float(self.fields[key]))
        except ValueError:
            raise MalformedHeaderError(f"Header key '{key}' is not numeric: {self.fields[key]!r}")
        return value

    @property
    def rows(self) -> int:
        return self._int_field('NumberOfRows')

    @property
    def cols(self) -> int:
        return self._int_field('NumberOfColumns')

    @property
    def native_header_length(self) -> int:
        if 'NativeHeaderLength' not in self.fields:
            return 0
        return max(self._int_field('NativeHeaderLength'), 0)

    @property
    def raster_offset(self) -> int:
        return self.data_offset + self.native_header_length

    @property
    def depression_deg(self) -> Optional[float]:
        value = self.fields.get('DesiredDepression') or self.fields.get('MeasuredDepression')
        try:
            return float(value) if value is not None else None
        except ValueError:
            return None


def _decode_line(line_bytes: bytes) -> str:
    try:
        return line_bytes.decode('ascii')
    except UnicodeDecodeError as e:
        raise HeaderEncodingError(f"Header line is not ASCII text: {e}")


def parse_header(raw_bytes: bytes) -> ChipHeader:
    """
    Parse the Phoenix header at the start of an MSTAR file

    Args:
        raw_bytes: Complete file contents (or at least the header part)

    Returns:
        ChipHeader: key/value fields and the byte offset where data begins
    """
    if not raw_bytes:
        raise MalformedHeaderError("Empty input: no header delimiter line")

    first_newline = raw_bytes.find(b'\n')
    if first_newline < 0:
        raise MalformedHeaderError("Header has no line terminator")
    first_line = raw_bytes[:first_newline]
    if not first_line.strip().startswith(HEADER_START):
        raise MalformedHeaderError("Input does not begin with a Phoenix header delimiter line")
    version = _decode_line(first_line).strip().strip('[]')

    fields: Dict[str, str] = {}
    position = first_newline + 1
    while True:
        newline = raw_bytes.find(b'\n', position)
        if newline < 0:
            raise MalformedHeaderError("Header end delimiter not found")
        line = _decode_line(raw_bytes[position:newline]).strip()
        position = newline + 1
        if line.startswith(HEADER_END):
            break
        if '=' not in line:
            # unknown free-text lines are tolerated
            continue
        key, value = line.split('=', 1)
        fields[key.strip()] = value.strip()

    return ChipHeader(fields=fields, data_offset=position, version=version)


def write_header(fields: Mapping[str, object], version: str = DEFAULT_VERSION) -> bytes:
    """
    Serialize a Phoenix header block

    Args:
        fields: Header keys and values
        version: Header version string

    Returns:
        bytes: ASCII header including both delimiter lines
    """
    lines = [f"[PhoenixHeaderVer{version}]"]
    lines.extend(f"{key}= {value}" for key, value in fields.items())
    lines.append("[EndofPhoenixHeader]")
    return ("\n".join(lines) + "\n").encode('ascii')


def write_mstar_file(path: str, magnitude: np.ndarray, phase: Optional[np.ndarray] = None,
                     extra_fields: Optional[Mapping[str, object]] = None) -> None:
    """Write a magnitude(/phase) raster in MSTAR layout (used by fixtures and exports)"""
    magnitude = np.asarray(magnitude, dtype='>f4')
    rows, cols = magnitude.shape
    fields = {'NumberOfColumns': cols, 'NumberOfRows': rows}
    if extra_fields:
        fields.update(extra_fields)
    payload = magnitude.tobytes()
    if phase is not None:
        payload += np.asarray(phase, dtype='>f4').tobytes()
    with open(path, 'wb') as f:
        f.write(write_header(fields) + payload)


def decode_raster(raw_bytes: bytes, header: ChipHeader) -> np.ndarray:
    """
    Extract the magnitude image from the raster block

    Args:
        raw_bytes: Complete file contents
        header: Parsed header of the same bytes

    Returns:
        np.ndarray: rows x cols float64 magnitude
    """
    rows, cols = header.rows, header.cols
    if rows < 1 or cols < 1:
        raise ChipDecodeError(f"Raster dimensions must be at least 1x1, got {rows}x{cols}")
    pixel_count = rows * cols

    payload = raw_bytes[header.raster_offset:]
    payload = payload[: len(payload) - len(payload) % 4]
    values = np.frombuffer(payload, dtype='>f4').astype(np.float64)

    data_type = header.fields.get('DataType', '').strip().lower()
    if not data_type:
        data_type = MAGNITUDE_PHASE if values.size >= 2 * pixel_count else MAGNITUDE_ONLY
    if data_type not in RASTER_TYPES:
        raise ChipDecodeError(f"Unsupported DataType '{data_type}'")

    needed = 2 * pixel_count if data_type == COMPLEX_IQ else pixel_count
    if values.size < needed:
        raise ChipDecodeError(
            f"Raster holds {values.size} values, {needed} needed for {rows}x{cols} {data_type}"
        )

    if data_type == COMPLEX_IQ:
        iq = values[:needed].reshape(rows, cols, 2)
        magnitude = np.sqrt(iq[..., 0] ** 2 + iq[..., 1] ** 2)
    else:
        magnitude = np.abs(values[:pixel_count].reshape(rows, cols))

    if not np.all(np.isfinite(magnitude)):
        raise ChipDecodeError("Raster contains non-finite samples")
    return magnitude


def bilinear_resize(image: np.ndarray, size: int = CHIP_SIZE) -> np.ndarray:
    """
    Bilinear resize with half-pixel centers (align_corners=False, no antialiasing)

    Args:
        image: 2-D array
        size: Output height and width

    Returns:
        np.ndarray: size x size float64 array
    """
    tensor = torch.as_tensor(np.ascontiguousarray(image), dtype=torch.float64)[None, None]
    resized = F.interpolate(tensor, size=(size, size), mode='bilinear', align_corners=False)
    return resized[0, 0].numpy()


def normalize_min_max(image: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Per-chip min-max normalization to [0, 1]

    Returns:
        (normalized image, degenerate flag); a zero dynamic range maps to all zeros
    """
    low, high = float(image.min()), float(image.max())
    if not high > low:
        return np.zeros_like(image, dtype=np.float32), True
    normalized = (image - low) / (high - low)
    return np.clip(normalized, 0.0, 1.0).astype(np.float32), False


def _read_magnitude(path: str) -> Tuple[np.ndarray, Optional[float]]:
    if path.endswith('.npy'):
        try:
            array = np.load(path, allow_pickle=False)
        except (ValueError, OSError) as e:
            raise ChipDecodeError(f"Cannot read array container {path}: {e}")
        if np.iscomplexobj(array):
            array = np.abs(array)
        elif array.ndim == 3 and array.shape[-1] == 2:
            # magnitude / phase planes
            array = array[..., 0]
        if array.ndim != 2 or min(array.shape) < 1:
            raise ChipDecodeError(f"Array container {path} is not a 2-D raster: {array.shape}")
        magnitude = np.abs(array.astype(np.float64))
        if not np.all(np.isfinite(magnitude)):
            raise ChipDecodeError(f"Array container {path} contains non-finite samples")
        return magnitude, None

    with open(path, 'rb') as f:
        raw = f.read()
    header = parse_header(raw)
    return decode_raster(raw, header), header.depression_deg


def load_chip(path: str, class_id: int = 0, source_id: Optional[str] = None,
              size: int = CHIP_SIZE) -> ImageChip:
    """
    Load one chip: magnitude -> bilinear resize to 84x84 -> min-max normalize

    Args:
        path: MSTAR raw file or `.npy` container
        class_id: Label assigned by the caller (class subdirectory)
        source_id: Origin identifier, defaults to the path

    Returns:
        ImageChip
    """
    magnitude, depression = _read_magnitude(path)
    if magnitude.shape != (size, size):
        magnitude = bilinear_resize(magnitude, size)
    pixels, degenerate = normalize_min_max(magnitude)
    if degenerate:
        logger.warning(f"Chip {path} has zero dynamic range, normalized to zeros")
    return ImageChip(
        pixels=pixels,
        class_id=class_id,
        source_id=source_id or path,
        depression_deg=depression,
        degenerate_range=degenerate,
    )


def _class_files(class_dir: str) -> List[str]:
    return sorted(
        os.path.join(class_dir, name) for name in os.listdir(class_dir)
        if not name.startswith('.') and os.path.isfile(os.path.join(class_dir, name))
    )


def scan_class_directories(src_dir: str, show_progress: bool = False) -> SARDataset:
    """
    Read every chip under src_dir/<class_name>/

    Unreadable files are logged and skipped.
    """
    class_names = sorted(
        name for name in os.listdir(src_dir)
        if not name.startswith('.') and os.path.isdir(os.path.join(src_dir, name))
    )
    chips: Dict[int, List[ImageChip]] = {}
    for class_id, class_name in enumerate(class_names):
        class_dir = os.path.join(src_dir, class_name)
        loaded = []
        for path in tqdm(_class_files(class_dir), desc=class_name, disable=not show_progress):
            try:
                loaded.append(load_chip(path, class_id=class_id,
                                        source_id=os.path.relpath(path, src_dir)))
            except FewSARError as e:
                logger.warning(f"Skipping {path}: {e}")
        chips[class_id] = loaded
    return SARDataset(class_names=class_names, chips=chips)


def ingest_directory(src_dir: str, out_dir: str, show_progress: bool = False) -> Dict:
    """
    Convert a directory of raw MSTAR chips into the portable dataset layout

    Args:
        src_dir: One subdirectory per class with raw MSTAR files
        out_dir: Output dataset directory

    Returns:
        dict: Written manifest (actual per-class counts included)
    """
    dataset = scan_class_directories(src_dir, show_progress=show_progress)
    depressions = sorted({
        chip.depression_deg for class_chips in dataset.chips.values()
        for chip in class_chips if chip.depression_deg is not None
    })
    return save_dataset(dataset, out_dir, extra_manifest={
        'source': os.path.abspath(src_dir),
        'resize': f'bilinear {CHIP_SIZE}x{CHIP_SIZE}',
        'normalization': 'per-chip min-max',
        'depression_angles': depressions,
    })
