"""Exception and warning types raised by the solver kit."""


class ParadiagError(Exception):
    """Base class for all errors raised by this package."""


class SingularBlock(ParadiagError):
    """A block system was numerically singular.

    ``frequency`` is set when the block belongs to a circulant preconditioner.
    """

    def __init__(self, message, frequency=None):
        super().__init__(message)
        self.frequency = frequency


class MaxIterations(ParadiagError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, history=None, frequency=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
        self.frequency = frequency


class Breakdown(ParadiagError):
    """Arnoldi process broke down without converging."""


class NewtonDiverged(ParadiagError):
    def __init__(self, message, history=None, step=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []
        self.step = step


class DivisionByZero(ParadiagError, ZeroDivisionError):
    def __init__(self, message, frequency):
        super().__init__(message)
        self.frequency = frequency


class InvalidInput(ParadiagError, ValueError):
    pass


class MismatchedReports(ParadiagError, ValueError):
    pass


class ConfigError(ParadiagError, ValueError):
    pass


class SolveError(ParadiagError):
    """Solver failure raised by the windowed driver, tagged with the window index."""

    def __init__(self, message, window=None):
        super().__init__(message)
        self.window = window


class DegenerateBlockWarning(RuntimeWarning):
    pass
