"""shiftbench: an uncertainty-quantification benchmark toolkit.

The pipeline stages, each usable on its own:

- :mod:`shiftbench.curation` — turn detection-scene annotations into
  single-object square crop specs with documented selection invariants.
- :mod:`shiftbench.weather` — deterministic parametric rain/fog corruption
  of 256x256 crops at two intensity levels.
- :mod:`shiftbench.aggregation` / :mod:`shiftbench.streaming` — collapse
  multi-pass predictions (MC-Dropout passes, ensemble members) into one
  mean/variance record per (image, method).
- :mod:`shiftbench.classification` / :mod:`shiftbench.regression` — the
  calibration metric suites (accuracy, ECE, NLL, Brier; MAE, IoU, Gaussian
  NLL, interval ECE, sharpness).
- :mod:`shiftbench.report` — per-(method, dataset) evaluation runs and
  fixed-precision markdown/CSV tables with a full-precision JSON sidecar.
- :mod:`shiftbench.figures` — reliability diagrams and calibration curves.
- :mod:`shiftbench.cli` — the ``shiftbench`` command line.
"""
from ._version import __version__
from .aggregation import (
    AggregatedPrediction,
    aggregate_classification,
    aggregate_regression,
    aggregate_samples,
    parse_aggregated,
    serialize_aggregated,
)
from .boxes import Box, BoxEncoding, BoxKind, box_mae, clip_area_in_window, decode_box, encode_box, iou
from .classification import (
    NLL_CLAMP,
    ClassificationReport,
    ReliabilityBin,
    accuracy,
    brier,
    classification_report,
    ece_classification,
    nll_classification,
    reliability_bins_csv,
)
from .curation import (
    CropInfeasibleError,
    CropSpec,
    CurationConfig,
    CurationResult,
    SceneAnnotation,
    SceneObject,
    apply_class_caps,
    curate_scene,
    curate_scenes,
    min_size_filter,
    parse_crop_specs,
    parse_scenes,
    propose_crop,
    serialize_crop_specs,
    serialize_scenes,
    single_main_object_check,
    transform_annotation,
)
from .errors import ShiftBenchError, ValidationError
from .records import (
    GroundTruthRecord,
    PredictionRecord,
    SampleSet,
    group_samples,
    parse_ground_truth,
    parse_predictions,
    serialize_ground_truth,
    serialize_predictions,
)
from .regression import (
    SIGMA_FLOOR,
    CalibrationLevel,
    RegressionReport,
    calibration_levels_csv,
    ece_regression,
    mae_dataset,
    mean_iou,
    nll_regression,
    regression_report,
    sharpness,
)
from .report import (
    CANONICAL_DATASET_ORDER,
    CellResult,
    EvaluationRun,
    dataset_display_name,
    evaluate,
    load_run,
    render_report,
    run_to_json,
)
from .streaming import aggregate_prediction_stream
from .weather import (
    AugmentationPreset,
    FogParams,
    RainParams,
    apply_fog,
    apply_rain,
    get_preset,
)

__all__ = [
    "__version__",
    # errors
    "ShiftBenchError",
    "ValidationError",
    "CropInfeasibleError",
    # geometry
    "Box",
    "BoxEncoding",
    "BoxKind",
    "box_mae",
    "clip_area_in_window",
    "decode_box",
    "encode_box",
    "iou",
    # records & wire formats
    "GroundTruthRecord",
    "PredictionRecord",
    "SampleSet",
    "group_samples",
    "parse_ground_truth",
    "parse_predictions",
    "serialize_ground_truth",
    "serialize_predictions",
    # aggregation
    "AggregatedPrediction",
    "aggregate_classification",
    "aggregate_prediction_stream",
    "aggregate_regression",
    "aggregate_samples",
    "parse_aggregated",
    "serialize_aggregated",
    # classification metrics
    "NLL_CLAMP",
    "ClassificationReport",
    "ReliabilityBin",
    "accuracy",
    "brier",
    "classification_report",
    "ece_classification",
    "nll_classification",
    "reliability_bins_csv",
    # regression metrics
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
    # curation
    "CropSpec",
    "CurationConfig",
    "CurationResult",
    "SceneAnnotation",
    "SceneObject",
    "apply_class_caps",
    "curate_scene",
    "curate_scenes",
    "min_size_filter",
    "parse_crop_specs",
    "parse_scenes",
    "propose_crop",
    "serialize_crop_specs",
    "serialize_scenes",
    "single_main_object_check",
    "transform_annotation",
    # weather
    "AugmentationPreset",
    "FogParams",
    "RainParams",
    "apply_fog",
    "apply_rain",
    "get_preset",
    # report
    "CANONICAL_DATASET_ORDER",
    "CellResult",
    "EvaluationRun",
    "dataset_display_name",
    "evaluate",
    "load_run",
    "render_report",
    "run_to_json",
]
