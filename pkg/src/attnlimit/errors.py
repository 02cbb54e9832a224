"""Exception types raised across the package."""


class AttnLimitError(Exception):
    """Base class for all package errors."""


class CyclicProgram(AttnLimitError, ValueError):
    pass


class NonPsdCovariance(AttnLimitError, ValueError):
    pass


class ShareKeyMismatch(AttnLimitError, ValueError):
    pass


class MissingHeadDim(AttnLimitError, ValueError):
    pass


class NonFiniteScore(AttnLimitError, ValueError):
    pass


class NegativeClip(AttnLimitError, ValueError):
    pass


class AsymmetricInput(AttnLimitError, ValueError):
    pass


class FactorizationFailure(AttnLimitError, RuntimeError):
    pass


class TooFewSamples(AttnLimitError, ValueError):
    pass


class EmptyOverlap(AttnLimitError, ValueError):
    pass


class InvalidConfig(AttnLimitError, ValueError):
    pass
