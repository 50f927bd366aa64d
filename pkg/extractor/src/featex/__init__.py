"""featex: feature and loss extraction into the coresel on-disk formats."""

from .extract import (
    DEFAULT_SPACES,
    SPACE_NAMES,
    ExtractionResult,
    ExtractorJob,
    extract_features,
    extract_irs_losses,
    run_extraction,
)
from .models import ModelLoadError, load_model
from .toydata import build_toy_dataset

__all__ = [
    "DEFAULT_SPACES",
    "SPACE_NAMES",
    "ExtractionResult",
    "ExtractorJob",
    "ModelLoadError",
    "build_toy_dataset",
    "extract_features",
    "extract_irs_losses",
    "load_model",
    "run_extraction",
]
