#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Comparison tables in the Model / Venue / Category / Backbone / <setting> layout.

Accuracy tables flag the best value of every category in every setting
column; runtime tables flag the fastest. On an exact tie the earliest row
wins. Reference rows (published numbers) are flagged among themselves.
"""

import logging
import os
from dataclasses import asdict, fields
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from fewsar_benchmark import BenchmarkResult
from methods.registry import BACKBONE_NAME, METHOD_REGISTRY
from utils.errors import LayoutError
from utils.result_formatters import (
    format_accuracy_with_ci,
    format_flag,
    format_hardware,
    format_minutes,
    format_setting_label,
)

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [f.name for f in fields(BenchmarkResult)]
BASE_COLUMNS = ['model', 'venue', 'category', 'backbone', 'source', 'caution']
DEFAULT_SETTINGS = [(5, 1), (5, 5)]
REFERENCE_WAY = 5
METRICS = ('accuracy', 'runtime')
FORMATS = ('csv', 'md')
CAUTION_MARK = ' †'


def write_results_csv(results: Sequence[BenchmarkResult], path: str) -> str:
    """One row per result, columns in BenchmarkResult field order"""
    frame = pd.DataFrame([asdict(r) for r in results], columns=RESULT_COLUMNS)
    frame.to_csv(path, index=False)
    return path


def read_results_csv(path: str) -> List[BenchmarkResult]:
    """Inverse of write_results_csv"""
    frame = pd.read_csv(path, dtype={'config_digest': str, 'method': str, 'category': str, 'hardware': str},
                        keep_default_na=False)
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise LayoutError(f"{path} is missing result columns {missing}")
    records = []
    for row in frame[RESULT_COLUMNS].to_dict(orient='records'):
        records.append(BenchmarkResult(
            method=row['method'],
            category=row['category'],
            n_way=int(row['n_way']),
            k_shot=int(row['k_shot']),
            accuracy=float(row['accuracy']),
            ci=float(row['ci']),
            runtime_minutes=float(row['runtime_minutes']),
            seed=int(row['seed']),
            config_digest=str(row['config_digest']),
            n_episodes=int(row['n_episodes']),
            hardware=str(row['hardware']),
        ))
    return records


def _value_columns(label: str) -> Tuple[str, str, str]:
    return label, f"{label} ci", f"{label} best"


class BenchmarkReporter:
    """Builds and writes comparison tables from BenchmarkResults"""

    def __init__(self, metric: str = 'accuracy', include_reference: bool = False,
                 hardware: Optional[Dict[str, str]] = None):
        if metric not in METRICS:
            raise LayoutError(f"metric must be one of {METRICS}, got '{metric}'")
        self.metric = metric
        self.include_reference = include_reference
        self.hardware = hardware or {}
        self._result_hardware: List[str] = []

    @property
    def runtime(self) -> bool:
        return self.metric == 'runtime'

    def settings(self, results: Sequence[BenchmarkResult]) -> List[Tuple[int, int]]:
        """Column settings; a table holds one n_way and one result per (method, k_shot)"""
        if not results:
            return list(DEFAULT_SETTINGS)
        ways = sorted({r.n_way for r in results})
        if len(ways) > 1:
            raise LayoutError(f"Results mix n_way values {ways}; one table holds one n_way")
        if self.include_reference and ways[0] != REFERENCE_WAY:
            raise LayoutError(f"Reference rows are {REFERENCE_WAY}-way, results are {ways[0]}-way")
        seen = set()
        for r in results:
            key = (r.method, r.k_shot)
            if key in seen:
                raise LayoutError(f"Two results for {r.method} {format_setting_label(r.n_way, r.k_shot)}")
            seen.add(key)
        shots = sorted({r.k_shot for r in results})
        return [(ways[0], k) for k in shots]

    def _run_rows(self, results: Sequence[BenchmarkResult]) -> List[Dict]:
        rows: Dict[str, Dict] = {}
        for r in results:
            entry = METHOD_REGISTRY.get(r.method)
            row = rows.setdefault(r.method, {
                'model': r.method,
                'venue': entry.venue if entry else '',
                'category': r.category,
                'backbone': BACKBONE_NAME,
                'source': 'run',
                'caution': bool(entry.caution) if entry else False,
            })
            value, ci, _ = _value_columns(format_setting_label(r.n_way, r.k_shot, self.runtime))
            row[value] = r.runtime_minutes if self.runtime else r.accuracy
            row[ci] = None if self.runtime else r.ci
        order = {name: i for i, name in enumerate(METHOD_REGISTRY)}
        return sorted(rows.values(), key=lambda row: order.get(row['model'], len(order)))

    def _reference_rows(self, settings: Sequence[Tuple[int, int]]) -> List[Dict]:
        rows = []
        for entry in METHOD_REGISTRY.values():
            numbers = entry.reference_runtime if self.runtime else entry.reference_accuracy
            if not numbers:
                continue
            row = {
                'model': entry.name,
                'venue': entry.venue,
                'category': entry.category,
                'backbone': BACKBONE_NAME,
                'source': 'reference',
                'caution': entry.caution,
            }
            for n_way, k_shot in settings:
                value, ci, _ = _value_columns(format_setting_label(n_way, k_shot, self.runtime))
                row[value] = numbers.get(k_shot)
                row[ci] = None
            rows.append(row)
        return rows

    def _flag_best(self, rows: List[Dict], settings: Sequence[Tuple[int, int]]) -> None:
        for n_way, k_shot in settings:
            value, _, best = _value_columns(format_setting_label(n_way, k_shot, self.runtime))
            winners: Dict[Tuple[str, str], int] = {}
            for index, row in enumerate(rows):
                row[best] = False
                if row.get(value) is None:
                    continue
                key = (row['source'], row['category'])
                current = winners.get(key)
                if current is None:
                    winners[key] = index
                    continue
                candidate, incumbent = row[value], rows[current][value]
                better = candidate < incumbent if self.runtime else candidate > incumbent
                if better:
                    winners[key] = index
            for index in winners.values():
                rows[index][best] = True

    def build_table(self, results: Sequence[BenchmarkResult]) -> pd.DataFrame:
        """
        Wide table: one row per model (and source), three columns per setting

        Returns:
            DataFrame with BASE_COLUMNS then '<setting>', '<setting> ci', '<setting> best'
        """
        settings = self.settings(results)
        self._result_hardware = sorted({r.hardware for r in results if r.hardware})
        rows = self._run_rows(results)
        if self.include_reference:
            rows.extend(self._reference_rows(settings))
        self._flag_best(rows, settings)

        columns = list(BASE_COLUMNS)
        for n_way, k_shot in settings:
            columns.extend(_value_columns(format_setting_label(n_way, k_shot, self.runtime)))
        return pd.DataFrame(rows, columns=columns)

    def render_markdown(self, table: pd.DataFrame) -> str:
        """Markdown rendering; best cells in bold, caution rows marked †"""
        labels = [c for c in table.columns if c not in BASE_COLUMNS and not c.endswith((' ci', ' best'))]
        header = ['Model', 'Venue', 'Category', 'Backbone'] + labels
        if self.include_reference:
            header.append('Source')
        lines = [
            '| ' + ' | '.join(header) + ' |',
            '|' + '|'.join(['---'] * len(header)) + '|',
        ]
        for row in table.to_dict(orient='records'):
            name = row['model'] + (CAUTION_MARK if row['caution'] else '')
            cells = [name, row['venue'], row['category'], row['backbone']]
            for label in labels:
                value = row[label]
                if pd.isna(value):
                    cells.append('')
                    continue
                if self.runtime:
                    text = format_minutes(value)
                else:
                    ci = row[f"{label} ci"]
                    text = format_accuracy_with_ci(value, None if pd.isna(ci) else ci)
                flag = format_flag(row[f"{label} best"])
                cells.append(f"{flag}{text}{flag}")
            if self.include_reference:
                cells.append(row['source'])
            lines.append('| ' + ' | '.join(str(c) for c in cells) + ' |')

        title = "Runtime (minutes per epoch)" if self.runtime else "Classification accuracy"
        caption = [f"**{title}**", ""]
        hardware = [format_hardware(self.hardware)] if self.hardware else self._result_hardware
        if self.runtime and hardware:
            caption.extend([f"Hardware: {'; '.join(hardware)}", ""])
        footer = ["", f"{CAUTION_MARK.strip()} reproduce with caution"] if table['caution'].any() else []
        return '\n'.join(caption + lines + footer) + '\n'

    def report(self, results: Sequence[BenchmarkResult], fmt: str, out_path: str) -> str:
        """
        Write the table

        csv writes the wide table; md writes the rendered table plus the wide
        table as a .csv next to it.

        Returns:
            str: Path of the requested file
        """
        if fmt not in FORMATS:
            raise LayoutError(f"format must be one of {FORMATS}, got '{fmt}'")
        table = self.build_table(results)
        parent = os.path.dirname(os.path.abspath(out_path))
        os.makedirs(parent, exist_ok=True)

        if fmt == 'csv':
            table.to_csv(out_path, index=False)
        else:
            with open(out_path, 'w', encoding='utf-8') as f:
                f.write(self.render_markdown(table))
            table.to_csv(os.path.splitext(out_path)[0] + '.csv', index=False)
        logger.info(f"Wrote {self.metric} table with {len(table)} rows to {out_path}")
        return out_path


def report(results: Sequence[BenchmarkResult], fmt: str, out_path: str, include_reference: bool = False,
           metric: str = 'accuracy', hardware: Optional[Dict[str, str]] = None) -> str:
    """Functional shortcut for BenchmarkReporter(...).report(...)"""
    reporter = BenchmarkReporter(metric=metric, include_reference=include_reference, hardware=hardware)
    return reporter.report(results, fmt, out_path)
