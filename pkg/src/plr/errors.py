"""Exception types shared across the pipeline stages."""


class PlrError(Exception):
    """Base class for all library errors."""


class UnsupportedFormatError(PlrError):
    """Image file is not 8-bit single-channel PNG or PGM."""


class EmptyMaskError(PlrError):
    """A paste operation received a mask with no true pixels."""


class EmptyBankError(PlrError):
    """A paste operation received a patch bank with no patches."""


class AttemptsExhaustedError(PlrError):
    """Rejection sampling gave up: acceptance rate below 1e-6."""


class ZeroVectorError(PlrError):
    """Cosine distance is undefined for an all-zero vector."""


class BankFormatError(PlrError):
    """Patch bank file is corrupt, truncated, or wrong version."""


class WeightsFormatError(PlrError):
    """Weight file is corrupt, truncated, or wrong version."""


class FingerprintMismatchError(WeightsFormatError):
    """Loaded weights belong to a different architecture."""


class ManifestError(PlrError):
    """Dataset manifest is malformed or references missing files."""


class ConfigError(PlrError):
    """Invalid configuration value or file."""
