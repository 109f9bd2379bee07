"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: ConfigError -> 2,
ProviderError -> 3, FixtureMissError -> 4.
"""


class LmmClassifyError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(LmmClassifyError):
    """Invalid configuration, class list, template, or manifest input."""


class ManifestError(ConfigError):
    """A dataset manifest failed validation."""


class EmptyTextError(LmmClassifyError):
    """Text became empty after canonicalization (empty label / empty embed input)."""


class EmbeddingError(LmmClassifyError):
    """Embedding backend failure."""


class DegenerateEmbeddingError(EmbeddingError):
    """The accumulator vector was all zeros and cannot be normalized."""


class DimensionMismatchError(EmbeddingError):
    """Two vectors of different dimensions were combined."""


class ProviderError(LmmClassifyError):
    """Remote LMM provider failure."""


class AuthenticationError(ProviderError):
    """Credentials missing or rejected; never retried."""


class RetriesExhaustedError(ProviderError):
    """All retry attempts failed; carries the last underlying error."""

    def __init__(self, message: str, last_error: Exception | None = None):
        super().__init__(message)
        self.last_error = last_error


class SafetyRefusalError(ProviderError):
    """The provider returned a refusal marker instead of content."""


class FixtureMissError(ProviderError):
    """Replay provider has no record for the request's cache key."""

    def __init__(self, key: str, prompt_text: str):
        super().__init__(
            f"no fixture record for key {key} (prompt: {prompt_text[:120]!r})"
        )
        self.key = key
        self.prompt_text = prompt_text


class CacheCorruptionError(LmmClassifyError):
    """A stored record failed its integrity check."""
