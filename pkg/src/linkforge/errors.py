"""Exception hierarchy shared by the solvers, loaders and the CLI."""


class LinkforgeError(Exception):
    """Base class for every error raised by the package."""


class EvaluationError(LinkforgeError):
    """A function returned a non-finite value where a finite one was required."""


class SolverError(LinkforgeError):
    """A kinematic solve failed."""

    def __init__(self, message, mechanism=None):
        if mechanism is not None:
            message = f"[{mechanism}] {message}"
        super().__init__(message)
        self.mechanism = mechanism


class NoConvergence(SolverError):
    pass


class SingularJacobian(SolverError):
    pass


class Singular(SolverError):
    """Transmission pole or collinear four-bar configuration."""


class OutOfDomain(LinkforgeError):
    pass


class NonFinite(LinkforgeError):
    def __init__(self, message, step=None, constraint=None):
        super().__init__(message)
        self.step = step
        self.constraint = constraint


class ParseError(LinkforgeError):
    pass


class ValidationError(LinkforgeError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigError(LinkforgeError):
    pass


class Unreachable(SolverError):
    """A kinematic vector does not satisfy a mechanism's closure."""
