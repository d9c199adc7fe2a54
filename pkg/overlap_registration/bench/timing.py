"""Wall-time accounting for benchmark cells and the weight-computation scaling fit."""
import threading
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from ..eoe import TimingSample


class TimingTracker:
    """Tracks and logs wall time per experiment cell."""

    def __init__(self, log_file: Optional[Path]):
        """
        Initialize timing tracker.

        Args:
            log_file: Path to log file, or None to disable logging
        """
        self.log_file = log_file
        self.session_times: Dict[str, float] = defaultdict(float)
        self.session_counts: Dict[str, int] = defaultdict(int)
        self._log_initialized = False
        self._lock = threading.Lock()

    def track(self, cell: str, seconds: float, status: str, pair: Tuple[int, int]) -> None:
        """
        Track one registration run.

        Args:
            cell: Cell label (e.g., "ICP+EOE")
            seconds: Wall time of the run
            status: Run status (e.g., "converged", "not-converged", "failed")
            pair: (target frame, source frame) indices
        """
        with self._lock:
            self.session_times[cell] += seconds
            self.session_counts[cell] += 1
            if self.log_file is not None:
                self._write_log_entry(cell, seconds, status, pair)

    def _write_log_entry(self, cell: str, seconds: float, status: str, pair: Tuple[int, int]) -> None:
        if not self._log_initialized:
            self.log_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_file, 'w') as f:
                f.write("# Registration Timing Log\n")
            self._log_initialized = True

        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
        entry = (
            f"[{timestamp}] {cell} | "
            f"Pair: {pair[0]}->{pair[1]} | "
            f"Time: {seconds * 1000.0:.1f} ms | "
            f"Status: {status}\n"
        )
        with open(self.log_file, 'a') as f:
            f.write(entry)

    def get_session_total(self) -> float:
        """Total tracked seconds across all cells."""
        return sum(self.session_times.values())

    def get_breakdown(self) -> Dict[str, float]:
        """
        Get time breakdown by cell.

        Returns:
            Dictionary with per-cell seconds and total
        """
        breakdown = dict(self.session_times)
        breakdown['total'] = self.get_session_total()
        return breakdown

    def display_summary(self) -> str:
        lines = []
        for cell, seconds in sorted(self.session_times.items()):
            runs = self.session_counts[cell]
            lines.append(f"{cell}: {seconds:.2f} s over {runs} run{'s' if runs != 1 else ''}")
        lines.append(f"Total: {self.get_session_total():.2f} s")
        return "\n".join(lines)


@dataclass(frozen=True)
class TimingFit:
    slope_ms_per_point: float
    intercept_ms: float
    r_squared: float


def linear_fit(samples: Sequence[TimingSample]) -> TimingFit:
    """Least-squares line of median milliseconds against point count."""
    if len(samples) < 2:
        raise ValueError('a linear fit needs at least two timing samples')
    n = np.array([sample.n for sample in samples], dtype=np.float64)
    ms = np.array([sample.median_ms for sample in samples])
    fit = linregress(n, ms)
    return TimingFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2))
