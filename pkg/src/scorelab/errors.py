"""Exception hierarchy."""


class ScoreLabError(Exception):
    pass


class InvalidScheduleError(ScoreLabError, ValueError):
    pass


class InsufficientDataError(ScoreLabError, ValueError):
    pass


class StepTooLargeError(ScoreLabError, ValueError):
    """eta = eps / sigma_L**2 exceeds 1."""


class StepTooSmallError(ScoreLabError, ValueError):
    """(1 - eta)**2 > gamma**2: the geometric decay cannot be reached."""


class DegenerateDensityError(ScoreLabError, ValueError):
    pass


class InvalidSizeError(ScoreLabError, ValueError):
    pass


class DivergenceError(ScoreLabError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonFiniteError(ScoreLabError, FloatingPointError):
    pass


class ConfigError(ScoreLabError, ValueError):
    pass
