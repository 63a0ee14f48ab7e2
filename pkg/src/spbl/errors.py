"""Exception hierarchy shared by all modules."""


class SpblError(Exception):
    pass


class NotSPD(SpblError, ValueError):
    pass


class Asymmetric(SpblError, ValueError):
    pass


class DimensionMismatch(SpblError, ValueError):
    pass


class NonConvergence(SpblError, RuntimeError):
    pass


class TooLarge(SpblError, ValueError):
    pass


class IllConditioned(SpblError, ValueError):
    pass


class ConstraintViolated(SpblError, ValueError):
    pass


class SupportOverflow(SpblError, ValueError):
    pass


class BoundViolated(SpblError, ValueError):
    pass


class RejectionOverflow(SpblError, RuntimeError):
    pass


class DomainError(SpblError, ValueError):
    pass


class ConfigError(SpblError, ValueError):
    pass
