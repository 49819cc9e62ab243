"""Feature exporter: encodes images and prompt files into DTF bundles."""

from .errors import ExportConfigError, ExportDataError
from .export import (
    ExportJob,
    export_image_features,
    export_text_embeddings,
    run_export,
    scan_images,
)
from .model import REGISTRY, ModelSpec, build_model

__version__ = "0.1.0"

__all__ = [
    "ExportConfigError",
    "ExportDataError",
    "ExportJob",
    "ModelSpec",
    "REGISTRY",
    "build_model",
    "export_image_features",
    "export_text_embeddings",
    "run_export",
    "scan_images",
    "__version__",
]
