"""vfmexport: turn image directories into VFMF feature files."""

from .encoders import ENCODER_NAMES, EncoderPlugin, get_encoder
from .errors import ExportError, JobError
from .export import ExportResult, ExtractionJob, extract
from .vfmf import write_vfmf

__all__ = [
    "ENCODER_NAMES",
    "EncoderPlugin",
    "ExportError",
    "ExportResult",
    "ExtractionJob",
    "JobError",
    "extract",
    "get_encoder",
    "write_vfmf",
]

__version__ = "0.1.0"
