"""Estimate HEVC decoding energy from bit stream features and stream variables."""

from .dataset import Dataset, DatasetRow, GroupKey, load_dataset, save_dataset
from .evaluation import CvReport, cross_validate, frame_level_energies, mean_abs_error, relative_error, render_report
from .features import FeatureId, FeatureVector, count_features, feature_ids
from .fit import FitResult, fit_linear_relative, fit_model, fit_trust_region
from .mars import fit_mars
from .models import MODEL_IDS, BitstreamMeta, HingeTerm, TrainedModel
from .simlab import GeneratorConfig, generate_dataset, student_t_critical
from .trace import SyntaxEventTrace, parse_trace, read_trace_file

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DatasetRow", "GroupKey", "load_dataset", "save_dataset",
    "CvReport", "cross_validate", "frame_level_energies", "mean_abs_error", "relative_error", "render_report",
    "FeatureId", "FeatureVector", "count_features", "feature_ids",
    "FitResult", "fit_linear_relative", "fit_model", "fit_trust_region", "fit_mars",
    "MODEL_IDS", "BitstreamMeta", "HingeTerm", "TrainedModel",
    "GeneratorConfig", "generate_dataset", "student_t_critical",
    "SyntaxEventTrace", "parse_trace", "read_trace_file",
]
