"""Exception hierarchy shared by all fairkd modules.

Every domain error derives from FairkdError so callers (and the CLI) can
distinguish domain failures (exit code 1) from configuration/usage errors
(ConfigError, exit code 2).
"""


class FairkdError(Exception):
    """Base class for all domain errors raised by this package."""


class ZeroVector(FairkdError):
    """A vector with (near-)zero norm was passed where a direction is required."""


class DimensionMismatch(FairkdError):
    """Two vectors/tensors that must share a dimension do not."""


class IndexOutOfRange(FairkdError):
    """A class/label index falls outside the valid range."""


class UninitializedStats(FairkdError):
    """AdaFace norm statistics were used before being initialized."""


class EmptyIdentity(FairkdError):
    """An identity with zero samples was passed to an aggregation."""


class DuplicateIdentityAcrossSources(FairkdError):
    """The same identity_id appears in more than one input manifest."""


class InvalidManifest(FairkdError):
    """A manifest violates a structural invariant (soft-label sums, duplicate
    sample ids, inconsistent source per identity, ...)."""


class EmptyManifest(FairkdError):
    """Training was requested on a manifest with no entries."""


class DivergenceDetected(FairkdError):
    """A training loss became NaN/Inf; the run is aborted with context."""


class FrozenViolation(FairkdError):
    """Teacher parameters changed during distillation."""


class EpochOutOfRange(FairkdError):
    """An epoch index outside [0, epochs) was queried."""


class ShapeMismatch(FairkdError):
    """Parameter/gradient shapes disagree in an optimizer step."""


class IoError(FairkdError):
    """A file could not be read or written."""


class FormatVersionMismatch(FairkdError):
    """A serialized artifact has an unknown or incompatible schema version."""


class MissingSample(FairkdError):
    """A protocol references a sample id that the store cannot resolve."""


class EmptyInput(FairkdError):
    """An operation requiring at least one element received none."""


class TooFewPairs(FairkdError):
    """Fewer pairs than folds were passed to k-fold accuracy."""


class NonFiniteScore(FairkdError):
    """A verification score is NaN/Inf; the scoring pipeline is broken."""


class TooFewGroups(FairkdError):
    """Fewer than two group accuracies were passed to a fairness metric."""


class DegenerateDenominator(FairkdError):
    """SER is undefined because the best group has zero error."""


class InsufficientIdentities(FairkdError):
    """A group lacks the identities/images needed to build verification pairs."""


class OddPairCount(FairkdError):
    """pairs_per_group must be even to balance positives and negatives."""


class UnbalancedProtocol(FairkdError):
    """A group protocol's positive and negative pair counts differ."""


class ConfigError(FairkdError):
    """A run configuration is malformed, incomplete, or inconsistent."""


class FixtureFormatError(FairkdError):
    """The reference-metrics fixture file is malformed."""
