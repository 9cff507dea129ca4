"""Collapse multi-pass prediction sets into single predictive estimates.

For a :class:`~shiftbench.records.SampleSet` of ``T`` stochastic passes (or
``M`` ensemble members) the predictive class distribution is approximated by
the arithmetic mean of the per-pass probability vectors, and the box estimate
by the per-coordinate mean with epistemic uncertainty given by the
per-coordinate population variance over the passes (divide by ``T``, not
``T - 1``: the passes approximate the predictive distribution itself rather
than estimate an external population).

Reductions are order-stabilized: records are processed in ``pass_id`` order
regardless of input order, so permuting the passes changes nothing, bit for
bit. Coordinates that are constant across passes are reproduced exactly
(mean equals the constant, variance equals 0.0) rather than through floating
point averaging.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .errors import ValidationError
from .records import SampleSet, _get_int, _get_str, _iter_lines, _load_object

__all__ = [
    "AggregatedPrediction",
    "aggregate_classification",
    "aggregate_regression",
    "aggregate_samples",
    "parse_aggregated",
    "serialize_aggregated",
]


@dataclass(frozen=True, slots=True)
class AggregatedPrediction:
    """The collapsed prediction for one (image, method) pair.

    ``mean_box`` keeps the raw per-coordinate mean even when it is degenerate
    (``x1 >= x2`` or ``y1 >= y2``); consumers exclude degenerate samples from
    IoU/MAE and count them. ``probs_variance`` is a diagnostic only; no
    metric consumes it.
    """

    image_id: str
    method_tag: str
    pass_count: int
    mean_probs: tuple[float, ...] | None = None
    predicted_class: int | None = None
    confidence: float | None = None
    probs_variance: tuple[float, ...] | None = None
    mean_box: tuple[float, float, float, float] | None = None
    box_variance: tuple[float, float, float, float] | None = None

    @property
    def box_degenerate(self) -> bool:
        """True when the mean box has no positive extent on some axis."""
        if self.mean_box is None:
            return False
        x1, y1, x2, y2 = self.mean_box
        return not (x1 < x2 and y1 < y2)


def _sorted_records(s: SampleSet):
    return sorted(s.records, key=lambda r: r.pass_id)


def _mean_and_var(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column mean and population variance, exact on constant columns."""
    mean = arr.mean(axis=0)
    var = arr.var(axis=0)
    const = arr.max(axis=0) == arr.min(axis=0)
    mean = np.where(const, arr[0], mean)
    var = np.where(const, 0.0, np.maximum(var, 0.0))
    return mean, var


def aggregate_classification(s: SampleSet) -> tuple[tuple[float, ...], int, float]:
    """Mean probability vector, argmax class (ties to the lowest index),
    and its confidence."""
    records = _sorted_records(s)
    for r in records:
        if r.class_probs is None:
            raise ValidationError(
                f"record pass_id={r.pass_id} for image '{s.image_id}' is missing class_probs",
                field="class_probs",
            )
    arr = np.array([r.class_probs for r in records], dtype=np.float64)
    mean, _ = _mean_and_var(arr)
    predicted = int(np.argmax(mean))
    return tuple(mean.tolist()), predicted, float(mean[predicted])


def aggregate_regression(
    s: SampleSet,
) -> tuple[tuple[float, float, float, float], tuple[float, float, float, float]]:
    """Per-coordinate mean box and population variance over the passes."""
    records = _sorted_records(s)
    for r in records:
        if r.box is None:
            raise ValidationError(
                f"record pass_id={r.pass_id} for image '{s.image_id}' is missing box",
                field="box",
            )
    arr = np.array([r.box for r in records], dtype=np.float64)
    mean, var = _mean_and_var(arr)
    return tuple(mean.tolist()), tuple(var.tolist())


def aggregate_samples(s: SampleSet) -> AggregatedPrediction:
    """Aggregate both heads of a sample set.

    Each head (classification / regression) is aggregated when every record
    carries it and left absent when none does; partial presence within a set
    is a validation error.
    """
    n_probs = sum(1 for r in s.records if r.class_probs is not None)
    n_boxes = sum(1 for r in s.records if r.box is not None)
    if 0 < n_probs < len(s.records):
        raise ValidationError(
            f"image '{s.image_id}', method '{s.method_tag}': some records carry "
            "class_probs and some do not",
            field="class_probs",
        )
    if 0 < n_boxes < len(s.records):
        raise ValidationError(
            f"image '{s.image_id}', method '{s.method_tag}': some records carry "
            "box and some do not",
            field="box",
        )

    mean_probs = predicted_class = confidence = probs_variance = None
    if n_probs:
        records = _sorted_records(s)
        arr = np.array([r.class_probs for r in records], dtype=np.float64)
        mean, var = _mean_and_var(arr)
        predicted_class = int(np.argmax(mean))
        confidence = float(mean[predicted_class])
        mean_probs = tuple(mean.tolist())
        probs_variance = tuple(var.tolist())

    mean_box = box_variance = None
    if n_boxes:
        mean_box, box_variance = aggregate_regression(s)

    return AggregatedPrediction(
        image_id=s.image_id,
        method_tag=s.method_tag,
        pass_count=s.pass_count,
        mean_probs=mean_probs,
        predicted_class=predicted_class,
        confidence=confidence,
        probs_variance=probs_variance,
        mean_box=mean_box,
        box_variance=box_variance,
    )


def serialize_aggregated(aggs: Iterable[AggregatedPrediction]) -> bytes:
    """Serialize aggregated predictions to the aggregated JSONL wire format."""
    lines = []
    for a in aggs:
        obj: dict[str, object] = {"image_id": a.image_id, "method": a.method_tag}
        if a.mean_probs is not None:
            obj["mean_probs"] = list(a.mean_probs)
            obj["predicted_class"] = a.predicted_class
            obj["confidence"] = a.confidence
        if a.probs_variance is not None:
            obj["probs_variance"] = list(a.probs_variance)
        if a.mean_box is not None:
            obj["mean_box"] = list(a.mean_box)
            obj["box_variance"] = list(a.box_variance)
        obj["pass_count"] = a.pass_count
        lines.append(json.dumps(obj, separators=(",", ":")))
    return ("\n".join(lines) + "\n").encode() if lines else b""


def parse_aggregated(stream: bytes | IO[bytes] | Iterable[bytes]) -> list[AggregatedPrediction]:
    """Parse the aggregated JSONL wire format back into records."""
    out = []
    for lineno, raw in _iter_lines(stream):
        obj = _load_object(raw, lineno)
        pass_count = _get_int(obj, "pass_count", lineno)
        if pass_count < 1:
            raise ValidationError(
                f"'pass_count' must be >= 1, got {pass_count}", line=lineno, field="pass_count"
            )
        mean_probs = obj.get("mean_probs")
        mean_box = obj.get("mean_box")
        kwargs: dict[str, object] = {}
        if mean_probs is not None:
            probs = tuple(float(v) for v in mean_probs)
            if not probs or any(not math.isfinite(v) for v in probs):
                raise ValidationError(
                    "'mean_probs' entries must be finite numbers", line=lineno, field="mean_probs"
                )
            kwargs["mean_probs"] = probs
            kwargs["predicted_class"] = _get_int(obj, "predicted_class", lineno)
            kwargs["confidence"] = float(obj.get("confidence", max(probs)))
            if "probs_variance" in obj:
                kwargs["probs_variance"] = tuple(float(v) for v in obj["probs_variance"])
        if mean_box is not None:
            if len(mean_box) != 4:
                raise ValidationError(
                    "'mean_box' must have exactly 4 entries", line=lineno, field="mean_box"
                )
            kwargs["mean_box"] = tuple(float(v) for v in mean_box)
            variance = obj.get("box_variance")
            if variance is None or len(variance) != 4:
                raise ValidationError(
                    "'box_variance' must accompany 'mean_box' with 4 entries",
                    line=lineno,
                    field="box_variance",
                )
            var = tuple(float(v) for v in variance)
            if any(v < 0.0 for v in var):
                raise ValidationError(
                    "'box_variance' entries must be >= 0", line=lineno, field="box_variance"
                )
            kwargs["box_variance"] = var
        if mean_probs is None and mean_box is None:
            raise ValidationError(
                "record must carry at least one of 'mean_probs' or 'mean_box'",
                line=lineno,
                field="mean_probs",
            )
        out.append(
            AggregatedPrediction(
                image_id=_get_str(obj, "image_id", lineno),
                method_tag=_get_str(obj, "method", lineno),
                pass_count=pass_count,
                **kwargs,
            )
        )
    return out
