#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import re
from typing import Dict, Optional, Tuple

from utils.errors import LayoutError

SETTING_PATTERN = re.compile(r'^\s*(\d+)-way\s*(\d+)-shot(?:\s*\(min\))?\s*$')


def format_percentage(value, decimals=2):
    """
    Format an accuracy value (already in percent) for a table cell

    Args:
        value (float): Accuracy in percent (e.g., 72.031)
        decimals (int): Number of decimals to keep

    Returns:
        str: Formatted value (e.g., "72.03%")
    """
    if value is None:
        return ""
    return f"{value:.{decimals}f}%"


def format_accuracy_with_ci(mean, ci_half_width, decimals=2):
    """
    Format accuracy with its 95% confidence half-width

    Args:
        mean (float): Mean accuracy in percent
        ci_half_width (float): 95% CI half-width in percent, None for reference rows

    Returns:
        str: e.g. "72.03 ± 0.45%" or "72.03%" when no interval is known
    """
    if mean is None:
        return ""
    if ci_half_width is None:
        return format_percentage(mean, decimals)
    return f"{mean:.{decimals}f} ± {ci_half_width:.{decimals}f}%"


def format_minutes(minutes, decimals=2):
    """Format a runtime in minutes per epoch"""
    if minutes is None:
        return ""
    return f"{minutes:.{decimals}f}"


def format_setting_label(n_way: int, k_shot: int, runtime: bool = False) -> str:
    """
    Column label for one episode setting

    Args:
        n_way: Classes per episode
        k_shot: Support images per class
        runtime: Append the "(min)" unit used by runtime tables

    Returns:
        str: e.g. "5-way 1-shot" or "5-way 1-shot (min)"
    """
    label = f"{n_way}-way {k_shot}-shot"
    return f"{label} (min)" if runtime else label


def parse_setting_label(label: str) -> Tuple[int, int]:
    """Inverse of format_setting_label"""
    match = SETTING_PATTERN.match(label)
    if not match:
        raise LayoutError(f"Not an episode setting column: '{label}'")
    return int(match.group(1)), int(match.group(2))


def format_flag(flag: Optional[bool]) -> str:
    """Render a best-in-category flag for markdown cells"""
    return "**" if flag else ""


def format_hardware(hardware: Optional[Dict[str, str]]) -> str:
    """
    One-line hardware descriptor

    Args:
        hardware: e.g. {'processor': 'x86_64', 'device': 'cpu'}

    Returns:
        str: e.g. "processor=x86_64, device=cpu"
    """
    if not hardware:
        return ""
    return ', '.join(f"{key}={value}" for key, value in hardware.items())
