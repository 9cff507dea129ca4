"""Regression metrics for box heads: MAE, mean IoU, Gaussian NLL, ECE, sharpness.

All metrics operate on aggregated predictions joined to ground truth by
image_id. Unlike the classification suite, regression scoring includes
out-of-distribution sentinel samples: a localization target is still
well-defined when the class label is not.

Uncertainty-aware metrics (NLL, calibration ECE) treat the per-coordinate
variance as a Gaussian scale. Predicted standard deviations below
``SIGMA_FLOOR`` are evaluated at the floor and counted; when *every*
variance is zero (single-pass, variance-free input) the uncertainty metrics
are reported absent rather than scored at the floor, because there is no
predictive distribution to calibrate. Sharpness remains defined (it is
identically zero in that case).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import ndtr

from .aggregation import AggregatedPrediction
from .classification import _as_index
from .errors import ValidationError
from .records import GroundTruthRecord

__all__ = [
    "SIGMA_FLOOR",
    "CalibrationLevel",
    "RegressionReport",
    "calibration_levels_csv",
    "ece_regression",
    "mae_dataset",
    "mean_iou",
    "nll_regression",
    "regression_report",
    "sharpness",
]

SIGMA_FLOOR = 1e-6

_N_COORDS = 4

_ABSENT_REASON = (
    "all box variances are zero; no predictive uncertainty to score"
)


@dataclass(frozen=True, slots=True)
class CalibrationLevel:
    """One point of the calibration curve: F(residual) <= level frequency."""

    level: float
    empirical_frequency: float


@dataclass(frozen=True, slots=True)
class RegressionReport:
    """Full regression scorecard for one (method, dataset) cell."""

    mae: float
    mean_iou: float
    nll: float | None
    ece: float | None
    sharpness: float
    n_samples: int
    n_excluded_degenerate: int
    levels: tuple[CalibrationLevel, ...]
    levels_by_coordinate: tuple[tuple[CalibrationLevel, ...], ...] | None
    sigma_floor_value: float = SIGMA_FLOOR
    sigma_floor_events: int = 0
    uncertainty_absent_reason: str | None = None


def _join_boxes(
    agg: Iterable[AggregatedPrediction], gt
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align box predictions with ground-truth boxes.

    Returns (pred (N,4), truth (N,4), variance (N,4)). OoD sentinel samples
    are included. Raises on missing ground truth or a missing box head.
    """
    index = _as_index(gt)
    pred_rows: list[tuple[float, ...]] = []
    truth_rows: list[tuple[float, ...]] = []
    var_rows: list[tuple[float, ...]] = []
    missing: list[str] = []
    for a in agg:
        truth = index.get(a.image_id)
        if truth is None:
            missing.append(a.image_id)
            continue
        if a.mean_box is None:
            raise ValidationError(
                f"aggregated prediction for image '{a.image_id}' has no mean_box",
                field="mean_box",
            )
        if a.box_variance is None:
            raise ValidationError(
                f"aggregated prediction for image '{a.image_id}' has no box_variance",
                field="box_variance",
            )
        pred_rows.append(a.mean_box)
        truth_rows.append(truth.box)
        var_rows.append(a.box_variance)
    if missing:
        shown = ", ".join(repr(m) for m in missing[:5])
        more = "" if len(missing) <= 5 else f" (+{len(missing) - 5} more)"
        raise ValidationError(f"missing ground truth for image_id(s): {shown}{more}")
    if not pred_rows:
        raise ValidationError("empty evaluation set")
    return (
        np.asarray(pred_rows, dtype=np.float64),
        np.asarray(truth_rows, dtype=np.float64),
        np.asarray(var_rows, dtype=np.float64),
    )


def _degenerate_mask(pred: np.ndarray) -> np.ndarray:
    """True where the predicted box has no positive extent on either axis."""
    return ~((pred[:, 0] < pred[:, 2]) & (pred[:, 1] < pred[:, 3]))


def mae_dataset(agg: Iterable[AggregatedPrediction], gt) -> float:
    """Mean absolute corner error in pixels, averaged over all 4N coordinates."""
    pred, truth, _ = _join_boxes(agg, gt)
    return float(np.mean(np.abs(pred - truth)))


def _iou_arrays(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    iw = np.minimum(pred[:, 2], truth[:, 2]) - np.maximum(pred[:, 0], truth[:, 0])
    ih = np.minimum(pred[:, 3], truth[:, 3]) - np.maximum(pred[:, 1], truth[:, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_p = (pred[:, 2] - pred[:, 0]) * (pred[:, 3] - pred[:, 1])
    area_t = (truth[:, 2] - truth[:, 0]) * (truth[:, 3] - truth[:, 1])
    return inter / (area_p + area_t - inter)


def mean_iou(agg: Iterable[AggregatedPrediction], gt) -> float:
    """Mean IoU over samples with a non-degenerate predicted box."""
    pred, truth, _ = _join_boxes(agg, gt)
    keep = ~_degenerate_mask(pred)
    if not keep.any():
        raise ValidationError(
            "empty evaluation set: every predicted box is degenerate"
        )
    return float(np.mean(_iou_arrays(pred[keep], truth[keep])))


def _floored_sigma(var: np.ndarray) -> tuple[np.ndarray, int]:
    sigma = np.sqrt(var)
    events = int(np.count_nonzero(sigma < SIGMA_FLOOR))
    return np.maximum(sigma, SIGMA_FLOOR), events


def nll_regression(agg: Iterable[AggregatedPrediction], gt) -> float | None:
    """Mean Gaussian negative log-likelihood per coordinate, or None.

    Returns None when every variance is zero (no uncertainty to score).
    """
    pred, truth, var = _join_boxes(agg, gt)
    if not var.any():
        return None
    sigma, _ = _floored_sigma(var)
    terms = 0.5 * np.log(2.0 * np.pi * sigma**2) + (pred - truth) ** 2 / (2.0 * sigma**2)
    return float(np.mean(terms))


def _level_values(n_levels: int) -> np.ndarray:
    return np.arange(1, n_levels + 1, dtype=np.float64) / n_levels


def _curve(cdf_values: np.ndarray, n_levels: int) -> tuple[CalibrationLevel, ...]:
    flat = cdf_values.reshape(-1)
    levels = _level_values(n_levels)
    # inclusive comparison: a residual exactly at the quantile counts as covered
    emp = np.mean(flat[None, :] <= levels[:, None], axis=1)
    return tuple(
        CalibrationLevel(level=float(l), empirical_frequency=float(e))
        for l, e in zip(levels, emp)
    )


def ece_regression(
    agg: Iterable[AggregatedPrediction], gt, n_levels: int = 10
) -> tuple[float | None, tuple[CalibrationLevel, ...]]:
    """Quantile calibration error pooled over all 4N coordinates.

    Returns (ece, levels). Both are absent (None, ()) when every variance
    is zero.
    """
    if n_levels < 1:
        raise ValidationError(f"level count must be >= 1, got {n_levels}", field="n_levels")
    pred, truth, var = _join_boxes(agg, gt)
    if not var.any():
        return None, ()
    sigma, _ = _floored_sigma(var)
    cdf = ndtr((pred - truth) / sigma)
    levels = _curve(cdf, n_levels)
    ece = float(
        np.mean([abs(l.empirical_frequency - l.level) for l in levels])
    )
    return ece, levels


def sharpness(agg: Iterable[AggregatedPrediction]) -> float:
    """Spread of the predicted uncertainty: per-coordinate population
    variance of the predicted standard deviations, averaged over the four
    box coordinates. Zero when every sample predicts the same scale (and in
    particular for variance-free input)."""
    var_rows: list[tuple[float, ...]] = []
    for a in agg:
        if a.box_variance is None:
            raise ValidationError(
                f"aggregated prediction for image '{a.image_id}' has no box_variance",
                field="box_variance",
            )
        var_rows.append(a.box_variance)
    if not var_rows:
        raise ValidationError("empty evaluation set")
    sigma = np.sqrt(np.asarray(var_rows, dtype=np.float64))
    return float(np.mean(np.var(sigma, axis=0)))


def regression_report(
    agg: Iterable[AggregatedPrediction],
    gt,
    n_levels: int = 10,
) -> RegressionReport:
    """Score one cell: accuracy-free regression suite plus calibration curve."""
    if n_levels < 1:
        raise ValidationError(f"level count must be >= 1, got {n_levels}", field="n_levels")
    agg = list(agg)
    pred, truth, var = _join_boxes(agg, gt)
    n = pred.shape[0]

    mae = float(np.mean(np.abs(pred - truth)))

    keep = ~_degenerate_mask(pred)
    n_excluded = int(n - np.count_nonzero(keep))
    if not keep.any():
        raise ValidationError(
            "empty evaluation set: every predicted box is degenerate"
        )
    iou = float(np.mean(_iou_arrays(pred[keep], truth[keep])))

    sigma_all = np.sqrt(var)
    sharp = float(np.mean(np.var(sigma_all, axis=0)))

    if not var.any():
        return RegressionReport(
            mae=mae,
            mean_iou=iou,
            nll=None,
            ece=None,
            sharpness=sharp,
            n_samples=n,
            n_excluded_degenerate=n_excluded,
            levels=(),
            levels_by_coordinate=None,
            sigma_floor_events=0,
            uncertainty_absent_reason=_ABSENT_REASON,
        )

    sigma, floor_events = _floored_sigma(var)
    terms = 0.5 * np.log(2.0 * np.pi * sigma**2) + (pred - truth) ** 2 / (2.0 * sigma**2)
    nll = float(np.mean(terms))

    cdf = ndtr((pred - truth) / sigma)
    levels = _curve(cdf, n_levels)
    ece = float(np.mean([abs(l.empirical_frequency - l.level) for l in levels]))
    per_coord = tuple(_curve(cdf[:, j], n_levels) for j in range(_N_COORDS))

    return RegressionReport(
        mae=mae,
        mean_iou=iou,
        nll=nll,
        ece=ece,
        sharpness=sharp,
        n_samples=n,
        n_excluded_degenerate=n_excluded,
        levels=levels,
        levels_by_coordinate=per_coord,
        sigma_floor_events=floor_events,
        uncertainty_absent_reason=None,
    )


def calibration_levels_csv(levels: Iterable[CalibrationLevel]) -> str:
    """Render the calibration curve as delimited text."""
    lines = ["level,empirical_frequency"]
    for lv in levels:
        lines.append(f"{lv.level!r},{lv.empirical_frequency!r}")
    return "\n".join(lines) + "\n"
