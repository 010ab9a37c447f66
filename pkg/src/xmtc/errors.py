"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, DivergenceError -> 4.
"""


class XmtcError(Exception):
    """Base class for package errors."""


class ConfigError(XmtcError):
    """Invalid configuration: bad hyperparameter, unknown key, malformed value."""


class StalenessError(ConfigError):
    """Artifacts built under different configurations were mixed."""


class DataError(XmtcError):
    """Invalid or missing input data: corpora, catalogs, artifact files."""


class DivergenceError(XmtcError):
    """Training produced a non-finite loss or parameter."""


class ShapeError(ValueError):
    """Tensor operands have incompatible shapes."""


class GradTapeError(RuntimeError):
    """Gradient tape misuse, e.g. backward called twice without reset."""
