"""Classification metrics over aggregated predictions.

All metrics compare ``AggregatedPrediction.mean_probs`` against matched
ground truth and skip out-of-distribution sentinel records (``class_id ==
-1``) with an explicit count — an OoD object cannot be meaningfully assigned
to any learned class, so it must not contribute to accuracy or calibration.

Expected calibration error uses ``B`` equidistant confidence bins
``[0, 1/B), [1/B, 2/B), ..., [(B-1)/B, 1]`` (the last bin closed so that
confidence 1.0 is binned) and is

    ECE = (1/N) * sum_b n_b * |ACC_b - mean-confidence_b|.

NLL clamps the true-class probability to ``[NLL_CLAMP, 1]`` to stay finite
under exported zero probabilities; the clamp value and the number of clamped
samples are carried in the report. The Brier score is the full multi-class
squared distance to the one-hot truth, so its range is ``[0, 2]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .aggregation import AggregatedPrediction
from .errors import ValidationError
from .records import GroundTruthRecord

__all__ = [
    "NLL_CLAMP",
    "ClassificationReport",
    "ReliabilityBin",
    "accuracy",
    "brier",
    "classification_report",
    "ece_classification",
    "nll_classification",
    "reliability_bins_csv",
]

NLL_CLAMP = 1e-12


@dataclass(frozen=True, slots=True)
class ReliabilityBin:
    """One confidence bin of a reliability diagram.

    ``mean_confidence`` and ``accuracy`` are ``None`` for empty bins.
    """

    lo: float
    hi: float
    mean_confidence: float | None
    accuracy: float | None
    count: int


@dataclass(frozen=True, slots=True)
class ClassificationReport:
    """All classification metrics for one (method, dataset) cell."""

    accuracy: float
    ece: float
    nll: float
    brier: float
    n_samples: int
    n_skipped_ood: int
    bins: tuple[ReliabilityBin, ...]
    nll_clamp_value: float = NLL_CLAMP
    nll_clamp_events: int = 0


def index_ground_truth(gt: Iterable[GroundTruthRecord]) -> dict[str, GroundTruthRecord]:
    """Index ground truth by image_id, rejecting duplicates."""
    index: dict[str, GroundTruthRecord] = {}
    for rec in gt:
        if rec.image_id in index:
            raise ValidationError(
                f"duplicate ground-truth image_id '{rec.image_id}'", field="image_id"
            )
        index[rec.image_id] = rec
    return index


def _as_index(gt) -> Mapping[str, GroundTruthRecord]:
    return gt if isinstance(gt, Mapping) else index_ground_truth(gt)


def _join(
    agg: Iterable[AggregatedPrediction], gt
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Align predictions with labels.

    Returns (probs (N,C), labels (N,), confidences (N,), n_skipped_ood) over
    non-sentinel samples. Raises on missing ground truth, missing
    mean_probs, or a class-count mismatch.
    """
    index = _as_index(gt)
    probs_rows: list[tuple[float, ...]] = []
    labels: list[int] = []
    confs: list[float] = []
    skipped = 0
    missing: list[str] = []
    width: int | None = None
    for a in agg:
        truth = index.get(a.image_id)
        if truth is None:
            missing.append(a.image_id)
            continue
        if a.mean_probs is None:
            raise ValidationError(
                f"aggregated prediction for image '{a.image_id}' has no mean_probs",
                field="mean_probs",
            )
        if truth.is_ood:
            skipped += 1
            continue
        if len(a.mean_probs) != truth.num_classes:
            raise ValidationError(
                f"image '{a.image_id}': mean_probs length {len(a.mean_probs)} does not "
                f"match num_classes {truth.num_classes}",
                field="num_classes",
            )
        if width is None:
            width = len(a.mean_probs)
        elif len(a.mean_probs) != width:
            raise ValidationError(
                "heterogeneous class_probs length across evaluated samples",
                field="class_probs",
            )
        probs_rows.append(a.mean_probs)
        labels.append(truth.class_id)
        confs.append(a.confidence if a.confidence is not None else max(a.mean_probs))
    if missing:
        shown = ", ".join(repr(m) for m in missing[:5])
        more = "" if len(missing) <= 5 else f" (+{len(missing) - 5} more)"
        raise ValidationError(f"missing ground truth for image_id(s): {shown}{more}")
    if not probs_rows:
        raise ValidationError("empty evaluation set")
    return (
        np.asarray(probs_rows, dtype=np.float64),
        np.asarray(labels, dtype=np.int64),
        np.asarray(confs, dtype=np.float64),
        skipped,
    )


def accuracy(agg: Iterable[AggregatedPrediction], gt) -> float:
    """Fraction of samples whose predicted class matches the label."""
    agg = list(agg)
    probs, labels, _, _ = _join(agg, gt)
    index = _as_index(gt)
    predicted = np.asarray(
        [
            a.predicted_class if a.predicted_class is not None else int(np.argmax(a.mean_probs))
            for a in agg
            if not index[a.image_id].is_ood
        ],
        dtype=np.int64,
    )
    return float(np.mean(predicted == labels))


def ece_classification(
    agg: Iterable[AggregatedPrediction], gt, n_bins: int = 10
) -> tuple[float, tuple[ReliabilityBin, ...]]:
    """Expected calibration error and the underlying reliability bins."""
    if n_bins < 1:
        raise ValidationError(f"bin count must be >= 1, got {n_bins}", field="n_bins")
    agg = list(agg)
    probs, labels, confs, _ = _join(agg, gt)
    predicted = probs.argmax(axis=1)
    correct = predicted == labels
    return _binned_ece(np.clip(confs, 0.0, 1.0), correct, n_bins)


def _binned_ece(
    confs: np.ndarray, correct: np.ndarray, n_bins: int
) -> tuple[float, tuple[ReliabilityBin, ...]]:
    edges = np.arange(n_bins + 1) / n_bins
    which = np.minimum(np.digitize(confs, edges), n_bins) - 1
    n = len(confs)
    bins = []
    total = 0.0
    for b in range(n_bins):
        members = which == b
        count = int(np.count_nonzero(members))
        if count:
            mean_conf = float(confs[members].mean())
            acc = float(correct[members].mean())
            total += count * abs(acc - mean_conf)
            bins.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]), mean_conf, acc, count))
        else:
            bins.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]), None, None, 0))
    return total / n, tuple(bins)


def nll_classification(agg: Iterable[AggregatedPrediction], gt) -> float:
    """Mean negative log-likelihood of the true class, clamped at ``NLL_CLAMP``."""
    probs, labels, _, _ = _join(agg, gt)
    p_true = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.clip(p_true, NLL_CLAMP, 1.0))))


def brier(agg: Iterable[AggregatedPrediction], gt) -> float:
    """Mean squared distance between mean_probs and the one-hot truth."""
    probs, labels, _, _ = _join(agg, gt)
    p_true = probs[np.arange(len(labels)), labels]
    per_sample = (probs * probs).sum(axis=1) - 2.0 * p_true + 1.0
    return float(np.mean(per_sample))


def classification_report(
    agg: Iterable[AggregatedPrediction], gt, n_bins: int = 10
) -> ClassificationReport:
    """Compute every classification metric in one pass over the join."""
    if n_bins < 1:
        raise ValidationError(f"bin count must be >= 1, got {n_bins}", field="n_bins")
    agg = list(agg)
    probs, labels, confs, skipped = _join(agg, gt)
    predicted = probs.argmax(axis=1)
    correct = predicted == labels
    acc = float(np.mean(correct))
    ece, bins = _binned_ece(np.clip(confs, 0.0, 1.0), correct, n_bins)
    p_true = probs[np.arange(len(labels)), labels]
    clamp_events = int(np.count_nonzero(p_true < NLL_CLAMP))
    nll = float(np.mean(-np.log(np.clip(p_true, NLL_CLAMP, 1.0))))
    bs = float(np.mean((probs * probs).sum(axis=1) - 2.0 * p_true + 1.0))
    return ClassificationReport(
        accuracy=acc,
        ece=ece,
        nll=nll,
        brier=bs,
        n_samples=len(labels),
        n_skipped_ood=skipped,
        bins=bins,
        nll_clamp_value=NLL_CLAMP,
        nll_clamp_events=clamp_events,
    )


def reliability_bins_csv(bins: Iterable[ReliabilityBin]) -> str:
    """Render reliability bins as CSV (empty bins keep empty statistics)."""
    lines = ["bin_lo,bin_hi,mean_confidence,accuracy,count"]
    for b in bins:
        mc = "" if b.mean_confidence is None else repr(b.mean_confidence)
        acc = "" if b.accuracy is None else repr(b.accuracy)
        lines.append(f"{b.lo!r},{b.hi!r},{mc},{acc},{b.count}")
    return "\n".join(lines) + "\n"
