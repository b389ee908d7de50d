"""Exception types shared across the package."""


class GradedSimError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(GradedSimError, ValueError):
    """An argument violates a documented precondition (bad value, bad shape)."""


class FormatError(InvalidInputError):
    """A file does not conform to its declared format.

    Carries the offending line number when one is known.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc += str(path)
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class ConfigurationError(GradedSimError, ValueError):
    """A configuration is internally inconsistent (e.g. an empty required bin)."""


class DegenerateInputError(GradedSimError, ValueError):
    """Input data is too degenerate for the operation (e.g. zero covariance)."""


class TrainingDivergedError(GradedSimError, RuntimeError):
    """Training produced a non-finite loss; aborting is preferred to skipping."""
