"""Model-side trace extraction: per-layer vocabulary logits to trace files."""

from .capture import ExtractionConfig, extract
from .errors import ConfigError, ExtractionError, ExtractorError
from .writer import (
    ENCODING_DENSE,
    ENCODING_SPARSE,
    MAGIC,
    VERSION,
    atomic_write,
    dense_step_bytes,
    header_bytes,
    sparse_step_bytes,
    top_pairs,
)

__version__ = "0.1.0"

__all__ = [
    "ExtractionConfig",
    "extract",
    "ConfigError",
    "ExtractionError",
    "ExtractorError",
    "ENCODING_DENSE",
    "ENCODING_SPARSE",
    "MAGIC",
    "VERSION",
    "atomic_write",
    "dense_step_bytes",
    "header_bytes",
    "sparse_step_bytes",
    "top_pairs",
    "__version__",
]
