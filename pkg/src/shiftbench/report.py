"""Benchmark orchestration: evaluate per (method, dataset) cell and render.

An :class:`EvaluationRun` holds one cell per (method_tag, dataset_tag) pair.
Every cell is either scored or explicitly absent with a human-readable
reason (no silent holes): classification is absent for box-only methods and
for all-sentinel OoD subsets; regression is absent for probability-only
methods. Within a scored regression cell, the uncertainty metrics may still
be absent (zero-variance single-pass input) — that reason lives on the
:class:`~shiftbench.regression.RegressionReport` itself.

``render_report`` produces fixed-precision markdown or CSV tables with
datasets as columns in a canonical order and metric-by-method rows; the
full-precision values survive in the JSON form (``run_to_json`` /
``load_run``), which round-trips exactly.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import IO, Iterable, Mapping

from ._version import __version__
from .aggregation import AggregatedPrediction, parse_aggregated
from .classification import (
    NLL_CLAMP,
    ClassificationReport,
    ReliabilityBin,
    classification_report,
    index_ground_truth,
)
from .errors import ValidationError
from .records import GroundTruthRecord, parse_ground_truth
from .regression import (
    SIGMA_FLOOR,
    CalibrationLevel,
    RegressionReport,
    regression_report,
)

__all__ = [
    "CANONICAL_DATASET_ORDER",
    "CellResult",
    "DATASET_DISPLAY",
    "EvaluationRun",
    "dataset_display_name",
    "evaluate",
    "load_run",
    "render_report",
    "run_to_json",
]

CANONICAL_DATASET_ORDER = (
    "ID",
    "KITTI",
    "CC",
    "CADC",
    "LFog",
    "LRain",
    "HFog",
    "HRain",
    "OoD",
)

# Column headers mirror the benchmark table wording; CADC appears as
# "Weather" because that subset carries the real adverse-weather recordings.
DATASET_DISPLAY = {
    "CADC": "Weather",
    "LFog": "L. Fog",
    "LRain": "L. Rain",
    "HFog": "H. Fog",
    "HRain": "H. Rain",
}

OOD_TAG = "OoD"

_CLS_ROWS = (("Acc.", "accuracy"), ("ECE", "ece"), ("Brier S.", "brier"))
_REG_ROWS = (("IoU", "mean_iou"), ("ECE", "ece"), ("NLL", "nll"))
_ONE_DECIMAL_METRICS = frozenset({"NLL"})

ABSENT_CELL = "—"  # em dash


@dataclass(frozen=True, slots=True)
class CellResult:
    """Scores (or absence reasons) for one (method, dataset) pair."""

    method: str
    dataset: str
    classification: ClassificationReport | None = None
    classification_absent_reason: str | None = None
    regression: RegressionReport | None = None
    regression_absent_reason: str | None = None


@dataclass(frozen=True, slots=True)
class EvaluationRun:
    """A full benchmark evaluation over methods x shift datasets."""

    task: str
    methods: tuple[str, ...]
    datasets: tuple[str, ...]
    cells: tuple[CellResult, ...]
    n_bins: int
    n_levels: int
    metadata: Mapping[str, object]

    def cell(self, method: str, dataset: str) -> CellResult:
        for candidate in self.cells:
            if candidate.method == method and candidate.dataset == dataset:
                return candidate
        raise KeyError(f"no cell for method '{method}', dataset '{dataset}'")


def dataset_display_name(tag: str) -> str:
    """Column header for a dataset tag."""
    return DATASET_DISPLAY.get(tag, tag)


def _ordered_datasets(tags: set[str]) -> tuple[str, ...]:
    ordered = [t for t in CANONICAL_DATASET_ORDER if t in tags]
    ordered.extend(sorted(tags - set(CANONICAL_DATASET_ORDER)))
    return tuple(ordered)


def _as_aggregated(source) -> list[AggregatedPrediction]:
    if isinstance(source, (bytes, bytearray)) or hasattr(source, "read"):
        return parse_aggregated(source)
    return list(source)


def _as_ground_truth(source) -> list[GroundTruthRecord]:
    if isinstance(source, (bytes, bytearray)) or hasattr(source, "read"):
        return parse_ground_truth(source)
    return list(source)


def evaluate(
    aggregated,
    ground_truth,
    task: str = "both",
    n_bins: int = 10,
    n_levels: int = 10,
    seed: int | None = None,
) -> EvaluationRun:
    """Score every (method, dataset) cell of an aggregated prediction set.

    ``aggregated`` and ``ground_truth`` may be parsed sequences or raw JSONL
    byte streams. Dataset tags come from the ground truth; every prediction
    must join to a ground-truth record by ``image_id``.
    """
    if task not in ("classification", "regression", "both"):
        raise ValidationError(
            f"task must be classification, regression or both, got '{task}'",
            field="task",
        )
    rows = _as_aggregated(aggregated)
    index = index_ground_truth(_as_ground_truth(ground_truth))

    missing = sorted({a.image_id for a in rows if a.image_id not in index})
    if missing:
        shown = ", ".join(repr(m) for m in missing[:5])
        more = "" if len(missing) <= 5 else f" (+{len(missing) - 5} more)"
        raise ValidationError(f"missing ground truth for image_id(s): {shown}{more}")
    seen_pairs: set[tuple[str, str]] = set()
    for a in rows:
        key = (a.image_id, a.method_tag)
        if key in seen_pairs:
            raise ValidationError(
                f"duplicate aggregated prediction for image '{a.image_id}', "
                f"method '{a.method_tag}'"
            )
        seen_pairs.add(key)

    methods = tuple(sorted({a.method_tag for a in rows}))
    datasets = _ordered_datasets({index[a.image_id].dataset_tag for a in rows})

    cells = []
    for method in methods:
        for dataset in datasets:
            subset = [
                a
                for a in rows
                if a.method_tag == method and index[a.image_id].dataset_tag == dataset
            ]
            cells.append(
                _score_cell(method, dataset, subset, index, task, n_bins, n_levels)
            )

    cls_reports = [c.classification for c in cells if c.classification is not None]
    reg_reports = [c.regression for c in cells if c.regression is not None]
    metadata = {
        "tool_version": __version__,
        "seed": seed,
        "nll_clamp_value": NLL_CLAMP,
        "sigma_floor_value": SIGMA_FLOOR,
        "nll_clamp_events_total": sum(r.nll_clamp_events for r in cls_reports),
        "sigma_floor_events_total": sum(r.sigma_floor_events for r in reg_reports),
    }
    return EvaluationRun(
        task=task,
        methods=methods,
        datasets=datasets,
        cells=tuple(cells),
        n_bins=n_bins,
        n_levels=n_levels,
        metadata=metadata,
    )


def _score_cell(
    method: str,
    dataset: str,
    subset: list[AggregatedPrediction],
    index: Mapping[str, GroundTruthRecord],
    task: str,
    n_bins: int,
    n_levels: int,
) -> CellResult:
    classification = None
    cls_reason = None
    regression = None
    reg_reason = None

    if not subset:
        reason = "no predictions for this cell"
        cls_reason = reason if task != "regression" else None
        reg_reason = reason if task != "classification" else None
        return CellResult(
            method=method,
            dataset=dataset,
            classification_absent_reason=cls_reason,
            regression_absent_reason=reg_reason,
        )

    if task in ("classification", "both"):
        with_probs = [a for a in subset if a.mean_probs is not None]
        if not with_probs:
            cls_reason = "predictions carry no classification head"
        elif all(index[a.image_id].is_ood for a in with_probs):
            cls_reason = (
                "all samples carry the out-of-distribution sentinel; "
                "classification is undefined"
            )
        else:
            classification = classification_report(with_probs, index, n_bins=n_bins)

    if task in ("regression", "both"):
        with_boxes = [a for a in subset if a.mean_box is not None]
        if not with_boxes:
            reg_reason = "predictions carry no box head"
        elif all(a.box_degenerate for a in with_boxes):
            reg_reason = "every predicted box is degenerate"
        else:
            regression = regression_report(with_boxes, index, n_levels=n_levels)

    return CellResult(
        method=method,
        dataset=dataset,
        classification=classification,
        classification_absent_reason=cls_reason,
        regression=regression,
        regression_absent_reason=reg_reason,
    )


# ---------------------------------------------------------------------------
# rendering


def _format_value(value: float | None, metric: str) -> str:
    if value is None:
        return ABSENT_CELL
    if metric in _ONE_DECIMAL_METRICS:
        return f"{value:.1f}"
    return f"{value:.3f}"


def _table_rows(
    run: EvaluationRun, task: str
) -> tuple[tuple[str, ...], list[tuple[str, ...]]]:
    """Header and body rows (unformatted frame) for one task's table."""
    if task == "classification":
        tags = tuple(t for t in run.datasets if t != OOD_TAG)
        metric_rows = _CLS_ROWS
    else:
        tags = run.datasets
        metric_rows = _REG_ROWS
    header = ("Metric", "Method") + tuple(dataset_display_name(t) for t in tags)
    body: list[tuple[str, ...]] = []
    for metric, attr in metric_rows:
        for method in run.methods:
            cells = []
            for tag in tags:
                cell = run.cell(method, tag)
                report = (
                    cell.classification if task == "classification" else cell.regression
                )
                value = getattr(report, attr) if report is not None else None
                cells.append(_format_value(value, metric))
            body.append((metric, method) + tuple(cells))
    return header, body


def _render_markdown(run: EvaluationRun) -> str:
    sections = []
    if run.task in ("classification", "both"):
        sections.append(("Classification", "classification"))
    if run.task in ("regression", "both"):
        sections.append(("Regression", "regression"))
    lines: list[str] = []
    for title, task in sections:
        header, body = _table_rows(run, task)
        lines.append(f"## {title}")
        lines.append("")
        lines.append("| " + " | ".join(header) + " |")
        lines.append("| " + " | ".join("---" for _ in header) + " |")
        for row in body:
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)


def _render_csv(run: EvaluationRun) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    tasks = []
    if run.task in ("classification", "both"):
        tasks.append("classification")
    if run.task in ("regression", "both"):
        tasks.append("regression")
    for task in tasks:
        header, body = _table_rows(run, task)
        writer.writerow(("task",) + header)
        for row in body:
            writer.writerow((task,) + row)
    return buffer.getvalue()


def render_report(run: EvaluationRun, format: str = "markdown") -> bytes:
    """Render the run as a fixed-precision table; pure function of the run."""
    if format == "markdown":
        return _render_markdown(run).encode()
    if format == "csv":
        return _render_csv(run).encode()
    raise ValidationError(
        f"format must be 'markdown' or 'csv', got '{format}'", field="format"
    )


# ---------------------------------------------------------------------------
# JSON sidecar (full precision)


def _bin_to_json(b: ReliabilityBin) -> dict:
    return {
        "lo": b.lo,
        "hi": b.hi,
        "mean_confidence": b.mean_confidence,
        "accuracy": b.accuracy,
        "count": b.count,
    }


def _classification_to_json(r: ClassificationReport) -> dict:
    return {
        "accuracy": r.accuracy,
        "ece": r.ece,
        "nll": r.nll,
        "brier": r.brier,
        "n_samples": r.n_samples,
        "n_skipped_ood": r.n_skipped_ood,
        "nll_clamp_value": r.nll_clamp_value,
        "nll_clamp_events": r.nll_clamp_events,
        "bins": [_bin_to_json(b) for b in r.bins],
    }


def _levels_to_json(levels: Iterable[CalibrationLevel]) -> list[dict]:
    return [
        {"level": l.level, "empirical_frequency": l.empirical_frequency} for l in levels
    ]


def _regression_to_json(r: RegressionReport) -> dict:
    return {
        "mae": r.mae,
        "mean_iou": r.mean_iou,
        "nll": r.nll,
        "ece": r.ece,
        "sharpness": r.sharpness,
        "n_samples": r.n_samples,
        "n_excluded_degenerate": r.n_excluded_degenerate,
        "sigma_floor_value": r.sigma_floor_value,
        "sigma_floor_events": r.sigma_floor_events,
        "uncertainty_absent_reason": r.uncertainty_absent_reason,
        "levels": _levels_to_json(r.levels),
        "levels_by_coordinate": None
        if r.levels_by_coordinate is None
        else [_levels_to_json(group) for group in r.levels_by_coordinate],
    }


def run_to_json(run: EvaluationRun) -> bytes:
    """Serialize the run at full float precision."""
    payload = {
        "schema": "shiftbench-run-v1",
        "task": run.task,
        "methods": list(run.methods),
        "datasets": list(run.datasets),
        "n_bins": run.n_bins,
        "n_levels": run.n_levels,
        "metadata": dict(run.metadata),
        "cells": [
            {
                "method": c.method,
                "dataset": c.dataset,
                "classification": None
                if c.classification is None
                else _classification_to_json(c.classification),
                "classification_absent_reason": c.classification_absent_reason,
                "regression": None
                if c.regression is None
                else _regression_to_json(c.regression),
                "regression_absent_reason": c.regression_absent_reason,
            }
            for c in run.cells
        ],
    }
    return json.dumps(payload, separators=(",", ":")).encode()


def _bin_from_json(data: dict) -> ReliabilityBin:
    return ReliabilityBin(
        lo=data["lo"],
        hi=data["hi"],
        mean_confidence=data["mean_confidence"],
        accuracy=data["accuracy"],
        count=data["count"],
    )


def _classification_from_json(data: dict) -> ClassificationReport:
    return ClassificationReport(
        accuracy=data["accuracy"],
        ece=data["ece"],
        nll=data["nll"],
        brier=data["brier"],
        n_samples=data["n_samples"],
        n_skipped_ood=data["n_skipped_ood"],
        bins=tuple(_bin_from_json(b) for b in data["bins"]),
        nll_clamp_value=data["nll_clamp_value"],
        nll_clamp_events=data["nll_clamp_events"],
    )


def _levels_from_json(data: list) -> tuple[CalibrationLevel, ...]:
    return tuple(
        CalibrationLevel(level=d["level"], empirical_frequency=d["empirical_frequency"])
        for d in data
    )


def _regression_from_json(data: dict) -> RegressionReport:
    return RegressionReport(
        mae=data["mae"],
        mean_iou=data["mean_iou"],
        nll=data["nll"],
        ece=data["ece"],
        sharpness=data["sharpness"],
        n_samples=data["n_samples"],
        n_excluded_degenerate=data["n_excluded_degenerate"],
        levels=_levels_from_json(data["levels"]),
        levels_by_coordinate=None
        if data["levels_by_coordinate"] is None
        else tuple(_levels_from_json(group) for group in data["levels_by_coordinate"]),
        sigma_floor_value=data["sigma_floor_value"],
        sigma_floor_events=data["sigma_floor_events"],
        uncertainty_absent_reason=data["uncertainty_absent_reason"],
    )


def load_run(source: bytes | IO[bytes]) -> EvaluationRun:
    """Reconstruct a run written by :func:`run_to_json`."""
    raw = source if isinstance(source, (bytes, bytearray)) else source.read()
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"run file is not valid JSON: {exc.msg}")
    if not isinstance(payload, dict) or payload.get("schema") != "shiftbench-run-v1":
        raise ValidationError("run file does not carry schema 'shiftbench-run-v1'")
    try:
        cells = tuple(
            CellResult(
                method=c["method"],
                dataset=c["dataset"],
                classification=None
                if c["classification"] is None
                else _classification_from_json(c["classification"]),
                classification_absent_reason=c["classification_absent_reason"],
                regression=None
                if c["regression"] is None
                else _regression_from_json(c["regression"]),
                regression_absent_reason=c["regression_absent_reason"],
            )
            for c in payload["cells"]
        )
        return EvaluationRun(
            task=payload["task"],
            methods=tuple(payload["methods"]),
            datasets=tuple(payload["datasets"]),
            cells=cells,
            n_bins=payload["n_bins"],
            n_levels=payload["n_levels"],
            metadata=payload["metadata"],
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"run file is missing required fields: {exc}")
