"""Figure rendering for calibration diagnostics.

Renders the two standard calibration plots to image files: the
reliability diagram (per-bin accuracy vs. confidence for classification)
and the calibration curve (empirical frequency vs. nominal level for
regression). Both use a non-interactive backend so they work headless;
nothing here ever opens a window.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .classification import ReliabilityBin
from .regression import CalibrationLevel

__all__ = ["save_calibration_curve", "save_reliability_diagram"]

_DPI = 150


def save_reliability_diagram(
    bins: Iterable[ReliabilityBin],
    path: str | Path,
    title: str | None = None,
) -> Path:
    """Render a reliability diagram (accuracy per confidence bin) to ``path``.

    Empty bins are drawn with zero height; the diagonal marks perfect
    calibration. The image format follows the file extension.
    """
    bins = list(bins)
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    try:
        lefts = [b.lo for b in bins]
        widths = [b.hi - b.lo for b in bins]
        heights = [0.0 if b.accuracy is None else b.accuracy for b in bins]
        ax.bar(
            lefts,
            heights,
            width=widths,
            align="edge",
            edgecolor="black",
            linewidth=0.6,
            color="tab:blue",
            alpha=0.75,
            label="accuracy",
        )
        ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=1)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("confidence")
        ax.set_ylabel("accuracy")
        ax.set_title(title if title is not None else "Reliability diagram")
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=_DPI)
    finally:
        plt.close(fig)
    return path


def save_calibration_curve(
    levels: Iterable[CalibrationLevel],
    path: str | Path,
    title: str | None = None,
) -> Path:
    """Render a regression calibration curve to ``path``.

    Plots the empirical frequency at each nominal level against the
    diagonal of perfect calibration.
    """
    levels = list(levels)
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    try:
        xs = [l.level for l in levels]
        ys = [l.empirical_frequency for l in levels]
        ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=1)
        ax.plot(xs, ys, marker="o", color="tab:orange", label="empirical")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("nominal level")
        ax.set_ylabel("empirical frequency")
        ax.set_title(title if title is not None else "Calibration curve")
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=_DPI)
    finally:
        plt.close(fig)
    return path
