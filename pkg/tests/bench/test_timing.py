"""Tests for TimingTracker and the scaling fit."""

import pytest

from overlap_registration.bench.timing import TimingTracker, linear_fit
from overlap_registration.eoe import TimingSample


def test_track_single_run(tmp_path):
    """Track one run and verify total and log file."""
    log_file = tmp_path / "timing.log"
    tracker = TimingTracker(log_file)

    tracker.track("ICP+EOE", 0.25, "converged", (1, 2))

    assert tracker.get_session_total() == 0.25
    content = log_file.read_text()
    assert content.startswith("# Registration Timing Log")
    assert "ICP+EOE" in content
    assert "Pair: 1->2" in content
    assert "250.0 ms" in content
    assert "converged" in content


def test_breakdown_by_cell(tmp_path):
    tracker = TimingTracker(tmp_path / "timing.log")
    tracker.track("ICP", 0.5, "converged", (0, 1))
    tracker.track("ICP", 0.25, "failed", (1, 2))
    tracker.track("GMM", 1.0, "not-converged", (0, 1))

    breakdown = tracker.get_breakdown()
    assert breakdown["ICP"] == pytest.approx(0.75)
    assert breakdown["GMM"] == pytest.approx(1.0)
    assert breakdown["total"] == pytest.approx(1.75)
    assert len((tmp_path / "timing.log").read_text().splitlines()) == 4


def test_tracker_without_log_file():
    tracker = TimingTracker(None)
    tracker.track("TrICP", 0.1, "converged", (0, 1))
    assert tracker.get_session_total() == pytest.approx(0.1)


def test_display_summary():
    tracker = TimingTracker(None)
    tracker.track("ICP", 1.0, "converged", (0, 1))
    tracker.track("ICP", 2.0, "converged", (1, 2))
    tracker.track("FICP", 0.5, "converged", (0, 1))

    summary = tracker.display_summary()
    assert "FICP: 0.50 s over 1 run" in summary
    assert "ICP: 3.00 s over 2 runs" in summary
    assert "Total: 3.50 s" in summary


def test_linear_fit_recovers_a_line():
    samples = [TimingSample(n, 0.002 * n + 1.5) for n in (100, 1000, 10000)]
    fit = linear_fit(samples)
    assert fit.slope_ms_per_point == pytest.approx(0.002)
    assert fit.intercept_ms == pytest.approx(1.5)
    assert fit.r_squared == pytest.approx(1.0)


def test_linear_fit_needs_two_samples():
    with pytest.raises(ValueError):
        linear_fit([TimingSample(100, 1.0)])
