"""Error taxonomy: configuration problems vs extraction failures."""


class ExtractorError(Exception):
    """Base class for everything this package raises on purpose."""


class ConfigError(ExtractorError):
    """Bad flag or option value; maps to exit code 1."""


class ExtractionError(ExtractorError):
    """Model loading, prompt reading, or capture failed; exit code 2."""
