"""Exception hierarchy shared by the library and the CLI."""


class DgmrfError(Exception):
    """Base class; ``code`` is the CLI exit status for this error class."""

    code = 1


class DimensionError(DgmrfError, ValueError):
    code = 2


class UnsupportedModelError(DgmrfError):
    code = 2


class ConfigError(DgmrfError, ValueError):
    code = 2


class ParseError(DgmrfError, ValueError):
    code = 3


class ConvergenceError(DgmrfError, RuntimeError):
    code = 4

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class TrainingDivergedError(DgmrfError, RuntimeError):
    code = 5

    def __init__(self, message, iteration=None, term=None):
        super().__init__(message)
        self.iteration = iteration
        self.term = term
