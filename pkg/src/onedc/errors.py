"""Exception taxonomy shared across the codec."""


class OnedcError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OnedcError):
    """Malformed or inconsistent run configuration."""


class CorpusError(OnedcError):
    """Unusable training/evaluation corpus (empty directory, no decodable files)."""


class AssetError(OnedcError):
    """Missing or quality-gate-failing pretrained asset."""


class ContractViolation(OnedcError):
    """An operation was called with inputs that break its stated preconditions."""


class EncodeError(OnedcError):
    """Symbol out of table range or stream limits exceeded during encoding."""


class DecodeError(OnedcError):
    """Truncated, corrupt, or inconsistent coded stream."""


class BitstreamError(OnedcError):
    """Container-level failure: bad magic, unknown version, length mismatch."""


class EvaluationError(OnedcError):
    """Metric computation cannot proceed (e.g. non-overlapping RD curves)."""
