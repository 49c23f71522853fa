"""Exception types shared across the package."""


class CrossviewError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(CrossviewError):
    """Invalid configuration: bad dimensions, unknown keys, type mismatches."""


class ValidationError(CrossviewError):
    """Invalid runtime input: out-of-range labels, malformed records."""


class IntegrityError(CrossviewError):
    """Internal bookkeeping violated: unregistered parameters, bad partitions."""


class CorruptDataError(CrossviewError):
    """On-disk data failed checksum or structural validation."""


class PrerequisiteError(CrossviewError):
    """A pipeline stage was invoked before its required predecessors."""


class ProtocolViolationError(CrossviewError):
    """An evaluation-protocol contract was broken (forbidden checkpoint,
    label access in an unlabeled mode, mask application at inference)."""


class FreezeViolationError(CrossviewError):
    """A parameter outside the allowed trainable set changed during a stage."""


class NumericError(CrossviewError):
    """Training aborted on non-finite loss or gradients."""
