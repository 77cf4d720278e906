"""Exception hierarchy shared by all modules."""


class MikadoError(Exception):
    pass


class ShapeError(MikadoError, ValueError):
    """Structural mismatch between arrays, grids or component shapes."""


class ParameterError(MikadoError, ValueError):
    """A parameter violates a documented precondition."""


class DomainError(MikadoError, ValueError):
    """Matrix argument outside the admissible domain of the Nash coefficients."""


class ResolutionError(MikadoError, ValueError):
    """The grid is too coarse for the requested construction."""

    def __init__(self, message, required_G=None):
        super().__init__(message)
        self.required_G = required_G


class ResourceCapError(MikadoError):
    """The construction needs a grid above the configured cap."""


class BlowUpError(MikadoError):
    """An evolution exceeded its growth guard."""

    def __init__(self, message, time=None, ratio=None):
        super().__init__(message)
        self.time = time
        self.ratio = ratio
