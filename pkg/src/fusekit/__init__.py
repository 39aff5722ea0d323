"""Checkpoint weight-fusion toolkit.

Fuses two or more network weight sets into one, diagnoses fusion
suitability (cosine similarity, oracle testing), searches fusion
coefficients, and evaluates segmentation prediction dumps for
performance (mIoU, precision, recall) and calibration (ECE, MCE, KL).
"""

from fusekit.tensor_store import (
    Checkpoint,
    ArchiveError,
    TruncatedArchiveError,
    HeaderError,
    LayoutError,
    CompatibilityError,
    read_archive,
    write_archive,
    check_compatible,
    flatten_concat,
)
from fusekit.fusion import (
    FusionError,
    FusionCoefficients,
    SimilarityReport,
    fuse_pair,
    fuse_many,
    swa_average,
    cosine_similarity,
    fuse_archive_files,
)
from fusekit.evaluation import (
    PredictionSet,
    ConfusionMatrix,
    ClassScores,
    CalibrationReport,
    oracle_merge,
    oracle_score,
    confusion_matrix,
    compute_metrics,
    deep_ensemble_average,
    calibration,
)
from fusekit.search import (
    Evaluator,
    EvaluatorError,
    SearchResult,
    grid_search_alpha,
    random_simplex_search,
    evaluate_external,
)
from fusekit.schedule import CosineCycleSchedule, lr_at, emit_schedule

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ArchiveError",
    "TruncatedArchiveError",
    "HeaderError",
    "LayoutError",
    "CompatibilityError",
    "read_archive",
    "write_archive",
    "check_compatible",
    "flatten_concat",
    "FusionError",
    "FusionCoefficients",
    "SimilarityReport",
    "fuse_pair",
    "fuse_many",
    "swa_average",
    "cosine_similarity",
    "fuse_archive_files",
    "PredictionSet",
    "ConfusionMatrix",
    "ClassScores",
    "CalibrationReport",
    "oracle_merge",
    "oracle_score",
    "confusion_matrix",
    "compute_metrics",
    "deep_ensemble_average",
    "calibration",
    "Evaluator",
    "EvaluatorError",
    "SearchResult",
    "grid_search_alpha",
    "random_simplex_search",
    "evaluate_external",
    "CosineCycleSchedule",
    "lr_at",
    "emit_schedule",
]
