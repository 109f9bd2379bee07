"""Export a projection-head text encoder to a portable inference bundle."""

from .bpe import BpeEncoder, byte_table
from .encoder import TEST_ENCODER_SOURCE, TextEncoder, load_encoder
from .errors import DependencyError, ExportError, VerificationError, WeightsError
from .export import export_encoder, verify_model_file, write_manifest
from .golden import DEFAULT_GOLDEN_TEXTS, emit_golden

__all__ = [
    "BpeEncoder",
    "byte_table",
    "DEFAULT_GOLDEN_TEXTS",
    "DependencyError",
    "emit_golden",
    "export_encoder",
    "ExportError",
    "load_encoder",
    "TEST_ENCODER_SOURCE",
    "TextEncoder",
    "VerificationError",
    "verify_model_file",
    "WeightsError",
    "write_manifest",
]

__version__ = "0.1.0"
