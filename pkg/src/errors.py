"""
Exception hierarchy shared by every stage of the pipeline.

The CLI maps each class to a distinct exit code (see `EXIT_CODES`).
"""


class IsggtError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(IsggtError, ValueError):
    """Invalid configuration, unknown keys, or a manifest/hash mismatch."""


class DataError(IsggtError, ValueError):
    """Malformed or degenerate data: world specs, datasets, checkpoints."""


class ShapeError(IsggtError, ValueError):
    """Tensor shapes that do not conform to the requested operation."""


class NumericalError(IsggtError, RuntimeError):
    """NaN/Inf encountered in a loss or gradient."""


EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    ShapeError: 4,
    NumericalError: 4,
}


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1
