"""Data model and JSONL wire formats for ground truth and predictions.

The toolkit exchanges data as JSON Lines (UTF-8, one object per line).

Ground-truth keys: ``image_id`` (string), ``dataset`` (string), ``class_id``
(int, ``-1`` sentinel allowed for out-of-distribution objects),
``num_classes`` (int), ``box`` (array of 4 numbers, corner points in the
256x256 crop frame), ``occluded`` / ``truncated`` (bool, optional, default
false).

Prediction keys: ``image_id``, ``method`` (string), ``pass_id`` (int >= 0),
``class_probs`` (array, optional), ``box`` (array of 4, optional, corner
points). At least one of ``class_probs`` / ``box`` must be present.

Unknown keys are ignored on both formats. Parsing never renormalizes
probabilities: vectors off the simplex by more than ``SIMPLEX_TOL`` are
rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from .errors import ValidationError

__all__ = [
    "FRAME_SIZE",
    "SIMPLEX_TOL",
    "GroundTruthRecord",
    "PredictionRecord",
    "SampleSet",
    "group_samples",
    "parse_ground_truth",
    "parse_predictions",
    "serialize_ground_truth",
    "serialize_predictions",
]

FRAME_SIZE = 256.0
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True, slots=True)
class GroundTruthRecord:
    """One annotated object in a curated 256x256 crop."""

    image_id: str
    dataset_tag: str
    class_id: int
    num_classes: int
    box: tuple[float, float, float, float]
    occlusion_flag: bool = False
    truncation_flag: bool = False

    @property
    def is_ood(self) -> bool:
        """True for the out-of-distribution class sentinel."""
        return self.class_id == -1


@dataclass(frozen=True, slots=True)
class PredictionRecord:
    """One network pass (or ensemble member) for one image."""

    image_id: str
    method_tag: str
    pass_id: int
    class_probs: tuple[float, ...] | None = None
    box: tuple[float, float, float, float] | None = None


@dataclass(frozen=True, slots=True)
class SampleSet:
    """All passes of one method on one image, ordered by ``pass_id``."""

    image_id: str
    method_tag: str
    records: tuple[PredictionRecord, ...]
    pass_count: int


def _iter_lines(stream: bytes | bytearray | IO[bytes] | Iterable[bytes]) -> Iterator[tuple[int, bytes]]:
    if isinstance(stream, (bytes, bytearray, memoryview)):
        lines: Iterable[bytes] = bytes(stream).splitlines()
    else:
        lines = stream
    for lineno, raw in enumerate(lines, start=1):
        if raw.strip():
            yield lineno, raw


def _load_object(raw: bytes, lineno: int) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed JSON: {exc.msg}", line=lineno) from exc
    if not isinstance(obj, dict):
        raise ValidationError("expected a JSON object", line=lineno)
    return obj


def _get_str(obj: dict, key: str, lineno: int) -> str:
    try:
        value = obj[key]
    except KeyError:
        raise ValidationError(f"missing required key '{key}'", line=lineno, field=key) from None
    if not isinstance(value, str) or not value:
        raise ValidationError(f"'{key}' must be a non-empty string", line=lineno, field=key)
    return value


def _get_int(obj: dict, key: str, lineno: int) -> int:
    try:
        value = obj[key]
    except KeyError:
        raise ValidationError(f"missing required key '{key}'", line=lineno, field=key) from None
    if type(value) is not int:
        raise ValidationError(f"'{key}' must be an integer", line=lineno, field=key)
    return value


def _check_number_list(values: object, key: str, lineno: int, arity: int | None) -> tuple[float, ...]:
    if not isinstance(values, (list, tuple)):
        raise ValidationError(f"'{key}' must be an array", line=lineno, field=key)
    if arity is not None and len(values) != arity:
        raise ValidationError(
            f"'{key}' must have exactly {arity} entries, got {len(values)}", line=lineno, field=key
        )
    out = []
    for v in values:
        if type(v) is bool or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValidationError(f"'{key}' entries must be finite numbers", line=lineno, field=key)
        out.append(float(v))
    return tuple(out)


def _check_gt_box(values: object, lineno: int) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = _check_number_list(values, "box", lineno, 4)
    if not x1 < x2:
        raise ValidationError(
            f"box: x1 < x2 violated (x1={x1}, x2={x2})", line=lineno, field="box"
        )
    if not y1 < y2:
        raise ValidationError(
            f"box: y1 < y2 violated (y1={y1}, y2={y2})", line=lineno, field="box"
        )
    if x1 < 0.0 or y1 < 0.0 or x2 > FRAME_SIZE or y2 > FRAME_SIZE:
        raise ValidationError(
            f"box must lie within the {FRAME_SIZE:g}px crop frame, got {(x1, y1, x2, y2)}",
            line=lineno,
            field="box",
        )
    return x1, y1, x2, y2


def _check_probs(values: object, lineno: int) -> tuple[float, ...]:
    probs = _check_number_list(values, "class_probs", lineno, None)
    if not probs:
        raise ValidationError("'class_probs' must not be empty", line=lineno, field="class_probs")
    total = 0.0
    for v in probs:
        if not v >= 0.0:
            raise ValidationError(
                f"'class_probs' entries must be >= 0, got {v}", line=lineno, field="class_probs"
            )
        total += v
    if not abs(total - 1.0) <= SIMPLEX_TOL:
        raise ValidationError(
            f"'class_probs' must sum to 1 within {SIMPLEX_TOL:g}, got sum {total!r}",
            line=lineno,
            field="class_probs",
        )
    return probs


def parse_ground_truth(stream: bytes | IO[bytes] | Iterable[bytes]) -> list[GroundTruthRecord]:
    """Parse a ground-truth JSONL stream, validating every record.

    Raises :class:`ValidationError` carrying the 1-based line number on the
    first malformed line or invariant violation.
    """
    records = []
    for lineno, raw in _iter_lines(stream):
        obj = _load_object(raw, lineno)
        num_classes = _get_int(obj, "num_classes", lineno)
        if num_classes < 1:
            raise ValidationError(
                f"'num_classes' must be >= 1, got {num_classes}", line=lineno, field="num_classes"
            )
        class_id = _get_int(obj, "class_id", lineno)
        if class_id != -1 and not 0 <= class_id < num_classes:
            raise ValidationError(
                f"'class_id' must be -1 (OoD sentinel) or in [0, {num_classes}), got {class_id}",
                line=lineno,
                field="class_id",
            )
        for flag in ("occluded", "truncated"):
            if flag in obj and not isinstance(obj[flag], bool):
                raise ValidationError(f"'{flag}' must be a boolean", line=lineno, field=flag)
        if "box" not in obj:
            raise ValidationError("missing required key 'box'", line=lineno, field="box")
        records.append(
            GroundTruthRecord(
                image_id=_get_str(obj, "image_id", lineno),
                dataset_tag=_get_str(obj, "dataset", lineno),
                class_id=class_id,
                num_classes=num_classes,
                box=_check_gt_box(obj["box"], lineno),
                occlusion_flag=bool(obj.get("occluded", False)),
                truncation_flag=bool(obj.get("truncated", False)),
            )
        )
    return records


def parse_predictions(stream: bytes | IO[bytes] | Iterable[bytes]) -> list[PredictionRecord]:
    """Parse a predictions JSONL stream, validating every record."""
    records = []
    for lineno, raw in _iter_lines(stream):
        obj = _load_object(raw, lineno)
        pass_id = _get_int(obj, "pass_id", lineno)
        if pass_id < 0:
            raise ValidationError(
                f"'pass_id' must be >= 0, got {pass_id}", line=lineno, field="pass_id"
            )
        probs = obj.get("class_probs")
        box = obj.get("box")
        if probs is None and box is None:
            raise ValidationError(
                "record must carry at least one of 'class_probs' or 'box'",
                line=lineno,
                field="class_probs",
            )
        records.append(
            PredictionRecord(
                image_id=_get_str(obj, "image_id", lineno),
                method_tag=_get_str(obj, "method", lineno),
                pass_id=pass_id,
                class_probs=None if probs is None else _check_probs(probs, lineno),
                box=None if box is None else _check_number_list(box, "box", lineno, 4),
            )
        )
    return records


def serialize_ground_truth(records: Iterable[GroundTruthRecord]) -> bytes:
    """Serialize records back to the JSONL wire format (round-trip safe)."""
    lines = []
    for r in records:
        lines.append(
            json.dumps(
                {
                    "image_id": r.image_id,
                    "dataset": r.dataset_tag,
                    "class_id": r.class_id,
                    "num_classes": r.num_classes,
                    "box": list(r.box),
                    "occluded": r.occlusion_flag,
                    "truncated": r.truncation_flag,
                },
                separators=(",", ":"),
            )
        )
    return ("\n".join(lines) + "\n").encode() if lines else b""


def serialize_predictions(records: Iterable[PredictionRecord]) -> bytes:
    """Serialize prediction records back to the JSONL wire format."""
    lines = []
    for r in records:
        obj: dict[str, object] = {
            "image_id": r.image_id,
            "method": r.method_tag,
            "pass_id": r.pass_id,
        }
        if r.class_probs is not None:
            obj["class_probs"] = list(r.class_probs)
        if r.box is not None:
            obj["box"] = list(r.box)
        lines.append(json.dumps(obj, separators=(",", ":")))
    return ("\n".join(lines) + "\n").encode() if lines else b""


def group_samples(predictions: Iterable[PredictionRecord]) -> list[SampleSet]:
    """Group validated predictions into one :class:`SampleSet` per
    ``(image_id, method_tag)``.

    The result is sorted by ``(image_id, method_tag)`` and each set's records
    by ``pass_id``, so the output is independent of input order.
    """
    grouped: dict[tuple[str, str], list[PredictionRecord]] = {}
    for rec in predictions:
        grouped.setdefault((rec.image_id, rec.method_tag), []).append(rec)
    sets = []
    for (image_id, method_tag), recs in sorted(grouped.items()):
        recs.sort(key=lambda r: r.pass_id)
        prob_len: int | None = None
        for prev, cur in zip(recs, recs[1:]):
            if prev.pass_id == cur.pass_id:
                raise ValidationError(
                    f"duplicate pass_id {cur.pass_id} for image '{image_id}', method '{method_tag}'",
                    field="pass_id",
                )
        for rec in recs:
            if rec.class_probs is not None:
                if prob_len is None:
                    prob_len = len(rec.class_probs)
                elif len(rec.class_probs) != prob_len:
                    raise ValidationError(
                        f"heterogeneous class_probs length for image '{image_id}', "
                        f"method '{method_tag}': {prob_len} vs {len(rec.class_probs)}",
                        field="class_probs",
                    )
        sets.append(
            SampleSet(
                image_id=image_id,
                method_tag=method_tag,
                records=tuple(recs),
                pass_count=len(recs),
            )
        )
    return sets
