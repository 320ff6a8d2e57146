"""Exception types raised across the package."""


class ACMError(Exception):
    """Base class for all acmsim errors."""


class MalformedSpec(ACMError, ValueError):
    pass


class InfiniteMean(ACMError, ValueError):
    pass


class WrongMinimumSupport(ACMError, ValueError):
    pass


class TooFewRegenerations(ACMError, ValueError):
    pass


class TooFewGaps(ACMError, ValueError):
    pass


class EmptySnapshot(ACMError, ValueError):
    pass


class TooLargeToEnumerate(ACMError, ValueError):
    pass


class MalformedInitialGraph(ACMError, ValueError):
    pass


class FutureSnapshot(ACMError, IndexError):
    pass


class TraceMismatch(ACMError, ValueError):
    pass


class HorizonTooLargeForExact(ACMError, RuntimeError):
    pass


class ConfigError(ACMError, ValueError):
    pass


class ResourceBoundExceeded(ACMError, RuntimeError):
    pass
