"""Exception hierarchy shared by all modules of the package."""


class ReinforceIPError(Exception):
    """Base class for every error raised on purpose by this package."""


class ConfigurationError(ReinforceIPError, ValueError):
    """A parameter or configuration value violates its documented range."""


class SchemaError(ConfigurationError):
    """A run configuration file does not match the strict schema.

    Attributes:
        path (str): dotted path of the offending key, e.g. ``train.Tmax``.
    """

    def __init__(self, message: str, path: str = "") -> None:
        """Store the message together with the offending key path."""
        super().__init__(message)
        self.path = path


class InputShapeError(ReinforceIPError, ValueError):
    """An array argument has the wrong dimension."""


class NumericError(ReinforceIPError, ArithmeticError):
    """A numerical operation is undefined (singular matrix, zero variance)."""


class RankDeficiencyError(NumericError):
    """The normal-equation matrix is not positive definite."""


class DivergenceError(ReinforceIPError, RuntimeError):
    """Training left the bounded region or produced non-finite numbers."""
