"""Exception types shared across the package.

The CLI maps these onto exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3,
``NumericalError`` -> 4.
"""


class MultireconError(Exception):
    pass


class ConfigError(MultireconError):
    pass


class DataError(MultireconError):
    pass


class CheckpointVersionError(DataError):
    pass


class NumericalError(MultireconError):
    pass


class BehindCameraError(ValueError):
    pass


class OutOfBoundsError(ValueError):
    pass
