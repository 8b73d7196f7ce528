"""Exception types shared by all modules."""


class SleLabError(Exception):
    """Base class for library errors."""


class PoleProximity(SleLabError):
    pass


class NonConvergence(SleLabError):
    pass


class StepUnderflow(SleLabError):
    pass


class OutOfRange(SleLabError):
    pass


class StartTooLate(SleLabError):
    pass


class BackwardBlowup(SleLabError):
    pass


class DriftBlowup(SleLabError):
    pass


class BiasExceedsTolerance(SleLabError):
    pass


class NotConverged(SleLabError):
    pass


class InsufficientSamples(SleLabError):
    pass


class EmptyInput(SleLabError):
    pass


class ConfigError(SleLabError):
    pass
