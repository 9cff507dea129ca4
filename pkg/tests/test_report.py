"""Evaluation orchestration and table rendering against the hand fixture.

Every expected number asserted here was derived by hand from the fixture
files in ``tests/data`` (closed forms kept as fractions/logs so the
derivation is auditable).
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import pytest

from shiftbench.aggregation import AggregatedPrediction, serialize_aggregated
from shiftbench.errors import ValidationError
from shiftbench.records import GroundTruthRecord, parse_ground_truth
from shiftbench.report import (
    ABSENT_CELL,
    CANONICAL_DATASET_ORDER,
    evaluate,
    load_run,
    render_report,
    run_to_json,
)
from shiftbench.streaming import aggregate_prediction_stream

DATA = Path(__file__).parent / "data"

TOL = 1e-12


@pytest.fixture(scope="module")
def fixture_run():
    aggregated = aggregate_prediction_stream((DATA / "fixture_predictions.jsonl").read_bytes())
    truth = parse_ground_truth((DATA / "fixture_truth.jsonl").read_bytes())
    return evaluate(aggregated, truth, task="both", n_bins=10, n_levels=10, seed=0)


class TestRunShape:
    def test_methods_and_datasets(self, fixture_run):
        assert fixture_run.methods == ("mc", "vanilla")
        assert fixture_run.datasets == ("ID", "HRain", "OoD")

    def test_every_cell_present_or_reasoned(self, fixture_run):
        assert len(fixture_run.cells) == 6
        for cell in fixture_run.cells:
            assert (cell.classification is not None) or cell.classification_absent_reason
            assert (cell.regression is not None) or cell.regression_absent_reason

    def test_metadata(self, fixture_run):
        md = fixture_run.metadata
        assert md["seed"] == 0
        assert md["nll_clamp_value"] == 1e-12
        assert md["sigma_floor_value"] == 1e-6
        assert md["nll_clamp_events_total"] == 0
        assert md["sigma_floor_events_total"] == 0
        assert md["tool_version"]


class TestMcCells:
    def test_id_classification(self, fixture_run):
        rep = fixture_run.cell("mc", "ID").classification
        assert rep.accuracy == pytest.approx(0.75, abs=TOL)
        assert rep.ece == pytest.approx(0.05, abs=TOL)
        assert rep.nll == pytest.approx(-(3 * math.log(0.8) + math.log(0.2)) / 4, abs=TOL)
        assert rep.brier == pytest.approx(0.36625, abs=TOL)
        assert rep.n_samples == 4
        assert rep.n_skipped_ood == 0

    def test_id_regression(self, fixture_run):
        rep = fixture_run.cell("mc", "ID").regression
        assert rep.mae == pytest.approx(1.5, abs=TOL)
        want_iou = (3844 / 4348 + 1.0 + 3840 / 4352 + 7680 / 8704) / 4
        assert rep.mean_iou == pytest.approx(want_iou, abs=TOL)
        want_nll = (math.log(8 * math.pi) + math.log(2 * math.pi)) / 4 + 11 / 8
        assert rep.nll == pytest.approx(want_nll, abs=TOL)
        assert rep.ece == pytest.approx(0.175, abs=TOL)
        assert rep.sharpness == pytest.approx(0.25, abs=TOL)
        assert rep.n_samples == 4
        assert rep.n_excluded_degenerate == 0
        assert rep.sigma_floor_events == 0
        assert rep.uncertainty_absent_reason is None

    def test_hrain_classification(self, fixture_run):
        rep = fixture_run.cell("mc", "HRain").classification
        assert rep.accuracy == pytest.approx(0.5, abs=TOL)
        assert rep.ece == pytest.approx(0.425, abs=TOL)
        want_nll = -(math.log(0.6) + math.log(0.25) + math.log(0.9) + math.log(0.2)) / 4
        assert rep.nll == pytest.approx(want_nll, abs=TOL)
        assert rep.brier == pytest.approx(0.5725, abs=TOL)

    def test_hrain_regression(self, fixture_run):
        rep = fixture_run.cell("mc", "HRain").regression
        assert rep.mae == pytest.approx(0.0, abs=TOL)
        assert rep.mean_iou == pytest.approx(1.0, abs=TOL)
        assert rep.nll == pytest.approx(math.log(2 * math.pi) / 2, abs=TOL)
        assert rep.ece == pytest.approx(0.25, abs=TOL)
        assert rep.sharpness == pytest.approx(0.0, abs=TOL)

    def test_ood_classification_absent(self, fixture_run):
        cell = fixture_run.cell("mc", "OoD")
        assert cell.classification is None
        assert "sentinel" in cell.classification_absent_reason

    def test_ood_regression(self, fixture_run):
        rep = fixture_run.cell("mc", "OoD").regression
        assert rep.mae == pytest.approx(0.25, abs=TOL)
        assert rep.mean_iou == pytest.approx((1.0 + 16128 / 16384) / 2, abs=TOL)
        assert rep.nll == pytest.approx(math.log(2 * math.pi) / 2 + 0.25, abs=TOL)
        assert rep.ece == pytest.approx(0.1925, abs=TOL)
        assert rep.sharpness == pytest.approx(0.0, abs=TOL)
        assert rep.n_samples == 2


class TestVanillaCells:
    def test_id_classification(self, fixture_run):
        rep = fixture_run.cell("vanilla", "ID").classification
        assert rep.accuracy == pytest.approx(1.0, abs=TOL)
        assert rep.ece == pytest.approx(0.1, abs=TOL)
        assert rep.nll == pytest.approx(-math.log(0.9), abs=TOL)
        assert rep.brier == pytest.approx(0.0175, abs=TOL)

    def test_id_regression(self, fixture_run):
        rep = fixture_run.cell("vanilla", "ID").regression
        assert rep.mae == pytest.approx(1.0, abs=TOL)
        want_iou = (3969 / 4223 + 9801 / 10199 + 3969 / 4223 + 8001 / 8383) / 4
        assert rep.mean_iou == pytest.approx(want_iou, abs=TOL)
        assert rep.nll is None
        assert rep.ece is None
        assert rep.levels == ()
        assert rep.sharpness == 0.0
        assert rep.uncertainty_absent_reason is not None

    def test_hrain_classification(self, fixture_run):
        rep = fixture_run.cell("vanilla", "HRain").classification
        assert rep.accuracy == pytest.approx(1.0, abs=TOL)
        assert rep.ece == pytest.approx(0.5, abs=TOL)
        want_nll = -(math.log(0.6) + math.log(0.4) + 2 * math.log(0.5)) / 4
        assert rep.nll == pytest.approx(want_nll, abs=TOL)
        assert rep.brier == pytest.approx(0.3825, abs=TOL)

    def test_hrain_regression(self, fixture_run):
        rep = fixture_run.cell("vanilla", "HRain").regression
        assert rep.mae == pytest.approx(1.0, abs=TOL)
        want_iou = (9801 / 10199 + 3481 / 3719 + 3969 / 4223 + 35721 / 36479) / 4
        assert rep.mean_iou == pytest.approx(want_iou, abs=TOL)

    def test_ood_cell(self, fixture_run):
        cell = fixture_run.cell("vanilla", "OoD")
        assert cell.classification is None
        assert "classification head" in cell.classification_absent_reason
        rep = cell.regression
        assert rep.mae == pytest.approx(1.0, abs=TOL)
        assert rep.mean_iou == pytest.approx((3969 / 4223 + 16129 / 16639) / 2, abs=TOL)


class TestMarkdown:
    def test_structure(self, fixture_run):
        text = render_report(fixture_run, "markdown").decode()
        lines = text.split("\n")
        assert lines[0] == "## Classification"
        assert lines[2] == "| Metric | Method | ID | H. Rain |"
        row_labels = [l.split(" | ")[0].lstrip("| ") for l in lines[4:10]]
        assert row_labels == ["Acc.", "Acc.", "ECE", "ECE", "Brier S.", "Brier S."]
        reg_start = lines.index("## Regression")
        assert lines[reg_start + 2] == "| Metric | Method | ID | H. Rain | OoD |"
        reg_labels = [
            l.split(" | ")[0].lstrip("| ") for l in lines[reg_start + 4 : reg_start + 10]
        ]
        assert reg_labels == ["IoU", "IoU", "ECE", "ECE", "NLL", "NLL"]

    def test_formatted_values(self, fixture_run):
        text = render_report(fixture_run, "markdown").decode()
        assert "| Acc. | mc | 0.750 | 0.500 |" in text
        assert "| Acc. | vanilla | 1.000 | 1.000 |" in text
        nll = fixture_run.cell("mc", "ID").regression.nll
        assert f"| NLL | mc | {nll:.1f} |" in text

    def test_vanilla_uncertainty_dashes(self, fixture_run):
        text = render_report(fixture_run, "markdown").decode()
        dash = ABSENT_CELL
        assert f"| ECE | vanilla | {dash} | {dash} | {dash} |" in text
        assert f"| NLL | vanilla | {dash} | {dash} | {dash} |" in text

    def test_ood_column_only_in_regression(self, fixture_run):
        text = render_report(fixture_run, "markdown").decode()
        cls_part, reg_part = text.split("## Regression")
        assert "OoD" not in cls_part
        assert "OoD" in reg_part

    def test_pure_function(self, fixture_run):
        assert render_report(fixture_run, "markdown") == render_report(
            fixture_run, "markdown"
        )


class TestCsv:
    def test_round_trip_exact(self, fixture_run):
        text = render_report(fixture_run, "csv").decode()
        rows = list(csv.reader(io.StringIO(text)))
        headers = [r for r in rows if r[0] == "task"]
        assert headers[0] == ["task", "Metric", "Method", "ID", "H. Rain"]
        assert headers[1] == ["task", "Metric", "Method", "ID", "H. Rain", "OoD"]
        by_key = {}
        for row in rows:
            if row[0] == "task":
                continue
            by_key[(row[0], row[1], row[2])] = row[3:]
        acc = fixture_run.cell("mc", "ID").classification.accuracy
        assert by_key[("classification", "Acc.", "mc")][0] == f"{acc:.3f}"
        assert by_key[("regression", "NLL", "vanilla")] == [ABSENT_CELL] * 3
        iou = fixture_run.cell("vanilla", "OoD").regression.mean_iou
        assert by_key[("regression", "IoU", "vanilla")][2] == f"{iou:.3f}"

    def test_render_deterministic_through_json(self, fixture_run):
        reloaded = load_run(run_to_json(fixture_run))
        assert render_report(reloaded, "csv") == render_report(fixture_run, "csv")
        assert render_report(reloaded, "markdown") == render_report(
            fixture_run, "markdown"
        )


class TestJsonSidecar:
    def test_exact_round_trip(self, fixture_run):
        reloaded = load_run(run_to_json(fixture_run))
        assert reloaded == fixture_run

    def test_bad_schema(self):
        with pytest.raises(ValidationError, match="schema"):
            load_run(b'{"task": "both"}')

    def test_bad_json(self):
        with pytest.raises(ValidationError, match="JSON"):
            load_run(b"{nope")


class TestEvaluateInputs:
    def test_accepts_byte_streams(self, fixture_run):
        agg = aggregate_prediction_stream((DATA / "fixture_predictions.jsonl").read_bytes())
        run = evaluate(
            serialize_aggregated(agg),
            (DATA / "fixture_truth.jsonl").read_bytes(),
            task="both",
            n_bins=10,
            n_levels=10,
            seed=0,
        )
        assert run == fixture_run

    def test_unknown_image_id(self):
        truth = [
            GroundTruthRecord(
                image_id="known",
                dataset_tag="ID",
                class_id=0,
                num_classes=2,
                box=(10.0, 10.0, 50.0, 50.0),
            )
        ]
        agg = [
            AggregatedPrediction(
                image_id="ghost",
                method_tag="mc",
                pass_count=1,
                mean_probs=(0.5, 0.5),
                predicted_class=0,
                confidence=0.5,
            )
        ]
        with pytest.raises(ValidationError, match="ghost"):
            evaluate(agg, truth)

    def test_invalid_task(self, fixture_run):
        with pytest.raises(ValidationError, match="task"):
            evaluate([], [], task="segmentation")

    def test_empty_run_renders_header_only(self):
        run = evaluate([], [], task="both")
        text = render_report(run, "markdown").decode()
        assert "## Classification" in text
        assert "| Metric | Method |" in text
        assert ABSENT_CELL not in text

    def test_duplicate_aggregated_rejected(self):
        truth = [
            GroundTruthRecord(
                image_id="a",
                dataset_tag="ID",
                class_id=0,
                num_classes=2,
                box=(10.0, 10.0, 50.0, 50.0),
            )
        ]
        agg = [
            AggregatedPrediction(
                image_id="a",
                method_tag="mc",
                pass_count=1,
                mean_probs=(1.0, 0.0),
                predicted_class=0,
                confidence=1.0,
            )
        ] * 2
        with pytest.raises(ValidationError, match="duplicate"):
            evaluate(agg, truth)


class TestDatasetOrdering:
    def test_custom_tags_appended_alphabetically(self):
        truth = []
        agg = []
        for tag in ("zebra", "ID", "apple", "HRain"):
            image = f"im_{tag}"
            truth.append(
                GroundTruthRecord(
                    image_id=image,
                    dataset_tag=tag,
                    class_id=0,
                    num_classes=2,
                    box=(10.0, 10.0, 50.0, 50.0),
                )
            )
            agg.append(
                AggregatedPrediction(
                    image_id=image,
                    method_tag="mc",
                    pass_count=1,
                    mean_probs=(0.9, 0.1),
                    predicted_class=0,
                    confidence=0.9,
                )
            )
        run = evaluate(agg, truth, task="classification")
        assert run.datasets == ("ID", "HRain", "apple", "zebra")
        assert CANONICAL_DATASET_ORDER.index("ID") < CANONICAL_DATASET_ORDER.index("HRain")

    def test_hole_cell_reasoned(self):
        truth = [
            GroundTruthRecord(
                image_id="a",
                dataset_tag="ID",
                class_id=0,
                num_classes=2,
                box=(10.0, 10.0, 50.0, 50.0),
            ),
            GroundTruthRecord(
                image_id="b",
                dataset_tag="HRain",
                class_id=0,
                num_classes=2,
                box=(10.0, 10.0, 50.0, 50.0),
            ),
        ]
        agg = [
            AggregatedPrediction(
                image_id="a",
                method_tag="solo",
                pass_count=1,
                mean_probs=(0.9, 0.1),
                predicted_class=0,
                confidence=0.9,
            ),
            AggregatedPrediction(
                image_id="b",
                method_tag="mc",
                pass_count=1,
                mean_probs=(0.9, 0.1),
                predicted_class=0,
                confidence=0.9,
            ),
        ]
        run = evaluate(agg, truth, task="both")
        hole = run.cell("solo", "HRain")
        assert hole.classification is None
        assert "no predictions" in hole.classification_absent_reason
        assert "no predictions" in hole.regression_absent_reason
