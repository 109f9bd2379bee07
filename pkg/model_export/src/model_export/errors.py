"""Error types for the export tool."""


class ExportError(Exception):
    """Base for everything this tool raises on purpose."""


class DependencyError(ExportError):
    """An optional package needed for this operation is not installed."""


class VerificationError(ExportError):
    """The exported model file does not reproduce the source embeddings."""


class WeightsError(ExportError):
    """The requested encoder weights could not be obtained."""
