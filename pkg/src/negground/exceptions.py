"""Error hierarchy.

Every error raised for bad *data* derives from :class:`NegGroundError`; the
CLI maps those to exit code 1. Usage problems are left to argparse (exit 2).
"""


class NegGroundError(Exception):
    """Base class for domain errors."""


# textparse
class EmptyCaption(NegGroundError, ValueError):
    pass


# negtome
class DimensionMismatch(NegGroundError, ValueError):
    pass


class NonFiniteInput(NegGroundError, ValueError):
    pass


class EmptySequence(NegGroundError, ValueError):
    pass


class NoCue(NegGroundError, ValueError):
    pass


class ZeroAlignment(NegGroundError, ValueError):
    pass


class BoundPreconditionError(NegGroundError, ValueError):
    """The negated phrase is not a single cue bound to a single content token."""


# adapter
class UnknownScheme(NegGroundError, ValueError):
    pass


class ShapeMismatch(NegGroundError, ValueError):
    pass


class RowNotNormalized(NegGroundError, ValueError):
    pass


# metrics
class InvalidBox(NegGroundError, ValueError):
    pass


class MixedImages(NegGroundError, ValueError):
    pass


class NoPositiveQueries(NegGroundError, ValueError):
    pass


class NoNegativeQueries(NegGroundError, ValueError):
    pass


class EmptyCandidates(NegGroundError, ValueError):
    pass


# pipeline
class NoEligibleRegions(NegGroundError):
    pass


class ImageRejected(NoEligibleRegions):
    """Image excluded outright, e.g. too many instances of one phrase type."""


class BoxOutOfBounds(NegGroundError, ValueError):
    pass


class ClientError(NegGroundError):
    """Transport-level failure talking to a model endpoint."""


class SchemaError(NegGroundError, ValueError):
    pass


class RetryExhausted(NegGroundError):
    def __init__(self, message, attempts=0, reasons=()):
        super().__init__(message)
        self.attempts = attempts
        self.reasons = list(reasons)


class UnparsableAnswer(NegGroundError, ValueError):
    pass


class EmptyCorpus(NegGroundError, ValueError):
    pass


# cli / config
class MalformedConfig(NegGroundError, ValueError):
    pass


class UnknownKey(MalformedConfig):
    pass


class UnknownCaption(NegGroundError, ValueError):
    """A detection refers to a caption id missing from the query table."""
