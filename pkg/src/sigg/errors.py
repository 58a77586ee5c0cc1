"""Exception hierarchy shared by all sigg modules.

Validation-type errors map to CLI exit code 1, numerical aborts to exit
code 2 (see :mod:`sigg.cli`).
"""


class SiggError(Exception):
    """Base class for all package errors."""


class InputError(SiggError):
    """Caller supplied data violating a documented precondition."""


class ParseError(SiggError):
    """A file could not be parsed; message names the file and line."""


class ValidationError(SiggError):
    """Parsed data violates an invariant (ranges, shapes, counts)."""


class RangeError(SiggError):
    """A scalar argument is outside its admissible range."""


class ShapeError(SiggError):
    """Array operands disagree in shape."""


class ConfigError(SiggError):
    """Invalid or unknown configuration key/value."""


class GradError(SiggError):
    """Gradient computation failed (non-finite values or checks)."""


class GenError(SiggError):
    """Generator produced non-finite outputs."""


class DiscError(SiggError):
    """Discriminator produced non-finite scores."""


class CheckpointError(SiggError):
    """Checkpoint file is malformed or incompatible."""


class NumericalError(SiggError):
    """A numerical routine left its domain of validity."""


NUMERICAL_ERRORS = (GradError, GenError, DiscError, NumericalError)
