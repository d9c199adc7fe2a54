"""Per-cell summaries of register runs, rendered as aligned text and CSV."""
import csv
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np


def cell_label(display_name: str, eoe: bool) -> str:
    return f"{display_name}+EOE" if eoe else display_name


def _stat(values: List[float], reducer) -> Optional[float]:
    return float(reducer(values)) if values else None


def summary_rows(entries: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Collapse per-pair result entries into one row per (algorithm, eoe) cell.

    Cells keep the order in which they first appear. Error statistics only
    cover pairs with a ground truth and no failure.
    """
    cells: Dict[tuple, List[Dict[str, Any]]] = {}
    for entry in entries:
        cells.setdefault((entry['algorithm'], entry['display_name'], entry['eoe']), []).append(entry)

    rows = []
    for (algorithm, display_name, eoe), members in cells.items():
        rotation = [e['rotation_error_deg'] for e in members if e.get('rotation_error_deg') is not None]
        translation = [e['translation_error_m'] for e in members if e.get('translation_error_m') is not None]
        rows.append({
            'cell': cell_label(display_name, eoe),
            'algorithm': algorithm,
            'eoe': eoe,
            'pairs': len(members),
            'converged': sum(1 for e in members if e['status'] == 'converged'),
            'failures': sum(1 for e in members if e['status'] == 'failed'),
            'rotation_mean_deg': _stat(rotation, np.mean),
            'rotation_median_deg': _stat(rotation, np.median),
            'translation_mean_m': _stat(translation, np.mean),
            'translation_median_m': _stat(translation, np.median),
        })
    return rows


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return '-' if value is None else f"{value:.{digits}f}"


def format_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Plain-text table with every column padded to its widest cell."""
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]

    def line(cells):
        return '  '.join(cell.ljust(width) for cell, width in zip(cells, widths)).rstrip()

    out = [line(headers), line(['-' * w for w in widths])]
    out.extend(line(row) for row in rows)
    return '\n'.join(out)


def _by_algorithm(summary: Sequence[Dict[str, Any]]) -> Dict[str, Dict[bool, Dict[str, Any]]]:
    grouped: Dict[str, Dict[bool, Dict[str, Any]]] = {}
    for row in summary:
        name = row['cell'][:-len('+EOE')] if row['eoe'] else row['cell']
        grouped.setdefault(name, {})[row['eoe']] = row
    return grouped


def rotation_table(summary: Sequence[Dict[str, Any]]) -> str:
    """Mean rotation error (degrees) per algorithm, without and with EOE side by side."""
    rows = []
    for name, modes in _by_algorithm(summary).items():
        rows.append([
            name,
            _fmt(modes.get(False, {}).get('rotation_mean_deg')),
            _fmt(modes.get(True, {}).get('rotation_mean_deg')),
        ])
    return format_table(['Algorithm', 'Normal', 'with EOE'], rows)


def avg_median_table(summary: Sequence[Dict[str, Any]]) -> str:
    """Avg / median rotation (degrees) and translation (meters) per algorithm and EOE mode."""
    rows = []
    for name, modes in _by_algorithm(summary).items():
        row = [name]
        for eoe in (False, True):
            cell = modes.get(eoe, {})
            row.append(f"{_fmt(cell.get('rotation_mean_deg'))} / {_fmt(cell.get('rotation_median_deg'))}")
            row.append(f"{_fmt(cell.get('translation_mean_m'))} / {_fmt(cell.get('translation_median_m'))}")
        rows.append(row)
    headers = ['Algorithm', 'Rot (deg)', 'Trans (m)', 'Rot+EOE (deg)', 'Trans+EOE (m)']
    return format_table(headers, rows)


def write_csv(path: Path, rows: Sequence[Dict[str, Any]], fieldnames: Optional[List[str]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, 'w', newline='') as csvfile:
        writer = csv.DictWriter(csvfile, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
