"""Exception types raised by the synthesis and simulation pipeline."""


class BackstepError(Exception):
    """Base class for all errors raised by this package."""


class NotControllable(BackstepError):
    pass


class BadGeometry(BackstepError):
    pass


class BadDimension(BackstepError):
    pass


class PolesNotConjugateClosed(BackstepError):
    pass


class NotHurwitz(BackstepError):
    pass


class AsymmetricQ(BackstepError):
    pass


class MarginTooSmall(BackstepError):
    pass


class OutOfDomain(BackstepError):
    pass


class NegativeArgument(BackstepError):
    pass


class NoConvergenceBudget(BackstepError):
    pass


class GridMismatch(BackstepError):
    pass


class SingularTransform(BackstepError):
    pass


class StepUnstable(BackstepError):
    pass


class NonPositiveValues(BackstepError):
    pass


class ConfigError(BackstepError):
    pass
