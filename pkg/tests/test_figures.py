"""Figure rendering smoke tests (headless backend, valid image files)."""
from __future__ import annotations

from shiftbench.classification import ReliabilityBin
from shiftbench.figures import save_calibration_curve, save_reliability_diagram
from shiftbench.regression import CalibrationLevel

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def make_bins():
    bins = []
    for i in range(10):
        lo, hi = i / 10, (i + 1) / 10
        if i < 3:
            bins.append(ReliabilityBin(lo=lo, hi=hi, mean_confidence=None, accuracy=None, count=0))
        else:
            mid = (lo + hi) / 2
            bins.append(
                ReliabilityBin(lo=lo, hi=hi, mean_confidence=mid, accuracy=mid * 0.9, count=5)
            )
    return tuple(bins)


def make_levels():
    return tuple(
        CalibrationLevel(level=(i + 1) / 10, empirical_frequency=min(1.0, (i + 1) / 10 + 0.05))
        for i in range(10)
    )


def test_reliability_diagram_writes_png(tmp_path):
    out = save_reliability_diagram(make_bins(), tmp_path / "rel.png")
    assert out == tmp_path / "rel.png"
    data = out.read_bytes()
    assert data[:8] == PNG_MAGIC
    assert len(data) > 1000


def test_reliability_diagram_custom_title(tmp_path):
    out = save_reliability_diagram(make_bins(), tmp_path / "titled.png", title="mc / ID")
    assert out.read_bytes()[:8] == PNG_MAGIC


def test_calibration_curve_writes_png(tmp_path):
    out = save_calibration_curve(make_levels(), tmp_path / "cal.png")
    data = out.read_bytes()
    assert data[:8] == PNG_MAGIC
    assert len(data) > 1000


def test_accepts_string_paths(tmp_path):
    out = save_calibration_curve(make_levels(), str(tmp_path / "s.png"))
    assert out.read_bytes()[:8] == PNG_MAGIC
