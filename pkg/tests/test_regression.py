"""Regression metrics: MAE, mean IoU, Gaussian NLL, calibration ECE, sharpness."""
from __future__ import annotations

import math

import numpy as np
import pytest

from shiftbench.aggregation import AggregatedPrediction
from shiftbench.errors import ValidationError
from shiftbench.records import GroundTruthRecord
from shiftbench.regression import (
    SIGMA_FLOOR,
    calibration_levels_csv,
    ece_regression,
    mae_dataset,
    mean_iou,
    nll_regression,
    regression_report,
    sharpness,
)

from oracles import (
    calibrated_regression_sample,
    gaussian_nll_reference,
    regression_ece_reference,
)


def make_pair(pred_box, true_box, variance, image_id, dataset="ID", class_id=0):
    agg = AggregatedPrediction(
        image_id=image_id,
        method_tag="mc",
        pass_count=2,
        mean_box=tuple(float(v) for v in pred_box),
        box_variance=tuple(float(v) for v in variance),
    )
    gt = GroundTruthRecord(
        image_id=image_id,
        dataset_tag=dataset,
        class_id=class_id,
        num_classes=7,
        box=tuple(float(v) for v in true_box),
        )
    return agg, gt


def build(pairs):
    return [p[0] for p in pairs], [p[1] for p in pairs]


class TestMae:
    def test_perfect(self):
        pairs = [make_pair([10, 10, 50, 50], [10, 10, 50, 50], [1, 1, 1, 1], "a")]
        assert mae_dataset(*build(pairs)) == 0.0

    def test_uniform_offset(self):
        pairs = [
            make_pair([14, 14, 54, 54], [10, 10, 50, 50], [1] * 4, "a"),
            make_pair([24, 24, 64, 64], [20, 20, 60, 60], [1] * 4, "b"),
        ]
        assert mae_dataset(*build(pairs)) == pytest.approx(4.0, abs=1e-12)

    def test_mean_of_per_box_maes(self):
        # per-box MAE 2 and 6 -> dataset MAE 4
        pairs = [
            make_pair([12, 12, 52, 52], [10, 10, 50, 50], [1] * 4, "a"),
            make_pair([16, 16, 56, 56], [10, 10, 50, 50], [1] * 4, "b"),
        ]
        assert mae_dataset(*build(pairs)) == pytest.approx(4.0, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValidationError, match="empty evaluation set"):
            mae_dataset([], [])

    def test_includes_ood(self):
        pairs = [make_pair([11, 11, 51, 51], [10, 10, 50, 50], [1] * 4, "a", class_id=-1)]
        assert mae_dataset(*build(pairs)) == pytest.approx(1.0, abs=1e-12)


class TestMeanIou:
    def test_all_perfect(self):
        pairs = [make_pair([10, 10, 50, 50], [10, 10, 50, 50], [1] * 4, f"i{k}") for k in range(3)]
        assert mean_iou(*build(pairs)) == 1.0

    def test_perfect_plus_disjoint(self):
        pairs = [
            make_pair([10, 10, 50, 50], [10, 10, 50, 50], [1] * 4, "a"),
            make_pair([100, 100, 140, 140], [10, 10, 50, 50], [1] * 4, "b"),
        ]
        assert mean_iou(*build(pairs)) == 0.5

    def test_one_seventh_fixture(self):
        pairs = [make_pair([0, 0, 2, 2], [1, 1, 3, 3], [1] * 4, "a")]
        assert mean_iou(*build(pairs)) == pytest.approx(1 / 7, abs=1e-12)

    def test_degenerate_excluded(self):
        pairs = [
            make_pair([10, 10, 50, 50], [10, 10, 50, 50], [1] * 4, "a"),
            make_pair([30, 0, 30, 5], [10, 10, 50, 50], [1] * 4, "b"),  # x1 == x2
        ]
        assert mean_iou(*build(pairs)) == 1.0


class TestNll:
    def test_zero_with_matched_variance(self):
        # residual 0 and sigma^2 = 1/(2*pi) -> 0.5*ln(1) + 0 = 0
        var = 1.0 / (2.0 * math.pi)
        pairs = [make_pair([10, 10, 50, 50], [10, 10, 50, 50], [var] * 4, "a")]
        assert nll_regression(*build(pairs)) == pytest.approx(0.0, abs=1e-12)

    def test_unit_residual_unit_sigma(self):
        pairs = [make_pair([11, 11, 51, 51], [10, 10, 50, 50], [1.0] * 4, "a")]
        want = 0.5 * math.log(2.0 * math.pi) + 0.5
        got = nll_regression(*build(pairs))
        assert got == pytest.approx(want, abs=1e-12)
        assert got == pytest.approx(1.41894, abs=1e-5)

    def test_zero_sigma_floored(self):
        pairs = [
            make_pair([11, 11, 51, 51], [10, 10, 50, 50], [0.0, 1.0, 1.0, 1.0], "a"),
        ]
        got = nll_regression(*build(pairs))
        # the zero-variance coordinate evaluates at the 1e-6 floor
        want = (
            0.5 * math.log(2.0 * math.pi * SIGMA_FLOOR**2)
            + 1.0 / (2.0 * SIGMA_FLOOR**2)
            + 3.0 * (0.5 * math.log(2.0 * math.pi) + 0.5)
        ) / 4.0
        assert got == pytest.approx(want, rel=1e-12)

    def test_all_zero_variance_absent(self):
        pairs = [make_pair([11, 11, 51, 51], [10, 10, 50, 50], [0.0] * 4, "a")]
        assert nll_regression(*build(pairs)) is None

    def test_scale_consistency(self):
        rng = np.random.default_rng(3)
        pred, truth, sigma = calibrated_regression_sample(rng, 200)
        pairs = [
            make_pair(pred[i], truth[i], (sigma[i] ** 2).tolist(), f"im{i}")
            for i in range(200)
        ]
        base = nll_regression(*build(pairs))
        for c in (2.0, 10.0, 0.5):
            scaled_pairs = [
                make_pair(
                    truth[i] + (pred[i] - truth[i]) * c,
                    truth[i],
                    ((sigma[i] * c) ** 2).tolist(),
                    f"im{i}",
                )
                for i in range(200)
            ]
            got = nll_regression(*build(scaled_pairs))
            assert got - base == pytest.approx(math.log(c), abs=1e-9)

    def test_matches_reference(self):
        rng = np.random.default_rng(5)
        pred, truth, sigma = calibrated_regression_sample(rng, 100)
        pairs = [
            make_pair(pred[i], truth[i], (sigma[i] ** 2).tolist(), f"im{i}") for i in range(100)
        ]
        want = gaussian_nll_reference(pred, truth, sigma)
        assert nll_regression(*build(pairs)) == pytest.approx(want, rel=1e-12)


class TestEce:
    def test_huge_sigma_quarter(self):
        pairs = [
            make_pair([11, 11, 51, 51], [10, 10, 50, 50], [1e18] * 4, f"i{k}") for k in range(5)
        ]
        ece, levels = ece_regression(*build(pairs), 10)
        assert ece == pytest.approx(0.25, abs=1e-12)
        assert len(levels) == 10

    def test_huge_residual_forty_five(self):
        pairs = [
            make_pair([110, 110, 150, 150], [10, 10, 50, 50], [1.0] * 4, f"i{k}")
            for k in range(5)
        ]
        ece, levels = ece_regression(*build(pairs), 10)
        assert ece == pytest.approx(0.45, abs=1e-12)
        assert [l.empirical_frequency for l in levels[:-1]] == [0.0] * 9
        assert levels[-1].empirical_frequency == 1.0

    def test_calibrated_oracle(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            pred, truth, sigma = calibrated_regression_sample(rng, 10_000)
            pairs = [
                make_pair(pred[i], truth[i], (sigma[i] ** 2).tolist(), f"im{i}")
                for i in range(10_000)
            ]
            ece, levels = ece_regression(*build(pairs), 10)
            assert ece < 0.02
            freqs = [l.empirical_frequency for l in levels]
            assert freqs == sorted(freqs)  # CDF monotonicity
            assert all(0.0 <= f <= 1.0 for f in freqs)

    def test_levels_structure(self):
        pairs = [make_pair([11, 11, 51, 51], [10, 10, 50, 50], [1.0] * 4, "a")]
        _, levels = ece_regression(*build(pairs), 10)
        assert [l.level for l in levels] == pytest.approx([k / 10 for k in range(1, 11)])
        assert levels[-1].level == 1.0

    def test_all_zero_variance_absent(self):
        pairs = [make_pair([11, 11, 51, 51], [10, 10, 50, 50], [0.0] * 4, "a")]
        ece, levels = ece_regression(*build(pairs), 10)
        assert ece is None
        assert levels == ()

    def test_matches_reference(self):
        rng = np.random.default_rng(7)
        pred, truth, sigma = calibrated_regression_sample(rng, 300)
        pairs = [
            make_pair(pred[i], truth[i], (sigma[i] ** 2).tolist(), f"im{i}") for i in range(300)
        ]
        ece, _ = ece_regression(*build(pairs), 10)
        want = regression_ece_reference(pred, truth, sigma, 10)
        assert ece == pytest.approx(want, abs=1e-12)

    def test_inclusive_comparison(self):
        # z = 0 exactly -> F = 0.5 counted at level 0.5 (inclusive <=)
        pairs = [make_pair([10, 10, 50, 50], [10, 10, 50, 50], [1.0] * 4, "a")]
        _, levels = ece_regression(*build(pairs), 10)
        by_level = {round(l.level, 3): l.empirical_frequency for l in levels}
        assert by_level[0.5] == 1.0
        assert by_level[0.4] == 0.0


class TestSharpness:
    def test_identical_everywhere(self):
        aggs, _ = build(
            [make_pair([10, 10, 50, 50], [10, 10, 50, 50], [4.0] * 4, f"i{k}") for k in range(4)]
        )
        assert sharpness(aggs) == 0.0

    def test_one_and_three(self):
        aggs, _ = build(
            [
                make_pair([10, 10, 50, 50], [10, 10, 50, 50], [1.0] * 4, "a"),
                make_pair([10, 10, 50, 50], [10, 10, 50, 50], [9.0] * 4, "b"),
            ]
        )
        assert sharpness(aggs) == pytest.approx(1.0, abs=1e-12)

    def test_single_sample_zero(self):
        aggs, _ = build([make_pair([10, 10, 50, 50], [10, 10, 50, 50], [1, 4, 9, 16], "a")])
        assert sharpness(aggs) == 0.0


class TestReport:
    def test_full_report(self):
        rng = np.random.default_rng(11)
        corners = rng.uniform(0.0, 150.0, size=(50, 2))
        sides = rng.uniform(30.0, 100.0, size=(50, 2))
        variances = rng.uniform(0.5, 4.0, size=(50, 4))
        offsets = rng.normal(0.0, 1.0, size=(50, 4))
        pairs = []
        for i in range(50):
            x1, y1 = corners[i]
            w, h = sides[i]
            true_box = (x1, y1, x1 + w, y1 + h)
            pred_box = tuple(true_box[j] + offsets[i, j] for j in range(4))
            pairs.append(make_pair(pred_box, true_box, variances[i].tolist(), f"im{i}"))
        rep = regression_report(*build(pairs), n_levels=10)
        assert rep.n_samples == 50
        assert rep.n_excluded_degenerate == 0
        assert 0.0 <= rep.mean_iou <= 1.0
        assert rep.nll is not None and rep.ece is not None
        assert rep.sharpness >= 0.0
        assert len(rep.levels) == 10
        assert len(rep.levels_by_coordinate) == 4
        assert rep.uncertainty_absent_reason is None

    def test_vanilla_absent_uncertainty(self):
        pairs = [
            make_pair([11, 11, 51, 51], [10, 10, 50, 50], [0.0] * 4, f"i{k}") for k in range(3)
        ]
        rep = regression_report(*build(pairs), n_levels=10)
        assert rep.mae == pytest.approx(1.0, abs=1e-12)
        assert rep.nll is None
        assert rep.ece is None
        assert rep.levels == ()
        assert rep.sharpness == 0.0
        assert "uncertainty" in rep.uncertainty_absent_reason

    def test_degenerate_counted(self):
        pairs = [
            make_pair([10, 10, 50, 50], [10, 10, 50, 50], [1.0] * 4, "a"),
            make_pair([30, 0, 30, 5], [10, 10, 50, 50], [1.0] * 4, "b"),
        ]
        rep = regression_report(*build(pairs), n_levels=10)
        assert rep.n_excluded_degenerate == 1
        assert rep.mean_iou == 1.0
        assert rep.n_samples == 2

    def test_floor_events_counted(self):
        pairs = [
            make_pair([11, 11, 51, 51], [10, 10, 50, 50], [0.0, 1.0, 1.0, 1.0], "a"),
        ]
        rep = regression_report(*build(pairs), n_levels=10)
        assert rep.sigma_floor_events == 1
        assert rep.sigma_floor_value == SIGMA_FLOOR

    def test_permutation_invariant(self):
        rng = np.random.default_rng(13)
        corners = rng.uniform(0.0, 120.0, size=(80, 2))
        sides = rng.uniform(5.0, 100.0, size=(80, 2))
        variances = rng.uniform(0.5, 4.0, size=(80, 4))
        offsets = rng.normal(0.0, 2.0, size=(80, 4))
        pairs = []
        for i in range(80):
            x1, y1 = corners[i]
            w, h = sides[i]
            true_box = (x1, y1, x1 + w, y1 + h)
            pred_box = tuple(true_box[j] + offsets[i, j] for j in range(4))
            pairs.append(make_pair(pred_box, true_box, variances[i].tolist(), f"im{i}"))
        aggs, gts = build(pairs)
        rep0 = regression_report(aggs, gts, n_levels=10)
        idx = rng.permutation(80)
        rep1 = regression_report([aggs[i] for i in idx], [gts[i] for i in idx], n_levels=10)
        assert rep1.mae == pytest.approx(rep0.mae, rel=1e-12)
        assert rep1.mean_iou == pytest.approx(rep0.mean_iou, rel=1e-12)
        assert rep1.nll == pytest.approx(rep0.nll, rel=1e-12)
        assert rep1.ece == pytest.approx(rep0.ece, abs=1e-12)
        assert rep1.sharpness == pytest.approx(rep0.sharpness, rel=1e-12)


def test_levels_csv():
    pairs = [make_pair([10, 10, 50, 50], [10, 10, 50, 50], [1.0] * 4, "a")]
    _, levels = ece_regression(*build(pairs), 10)
    text = calibration_levels_csv(levels)
    lines = text.strip().split("\n")
    assert lines[0] == "level,empirical_frequency"
    assert len(lines) == 11
    assert [float(l.split(",")[0]) for l in lines[1:]] == pytest.approx(
        [k / 10 for k in range(1, 11)]
    )
