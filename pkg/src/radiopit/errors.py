"""Exception hierarchy shared across the package."""


class RadioPitError(Exception):
    """Base class for every error raised by radiopit."""


class OutOfExtentError(RadioPitError, ValueError):
    def __init__(self, axis, value, lo, hi, index=None):
        self.axis, self.value, self.lo, self.hi, self.index = axis, value, lo, hi, index
        msg = f"{axis}={value!r} outside extent [{lo}, {hi}]"
        if index is not None:
            msg = f"measurement {index}: {msg}"
        super().__init__(msg)


class InvalidValueError(RadioPitError, ValueError):
    pass


class DimensionError(RadioPitError, ValueError):
    pass


class BoundsError(RadioPitError, ValueError):
    pass


class ParseError(RadioPitError, ValueError):
    def __init__(self, message, *, line=None, feature=None, source=None):
        self.line = line
        self.feature = feature
        self.source = source
        where = []
        if source is not None:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        if feature is not None:
            where.append(f"feature {feature}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class EmptyBandError(RadioPitError, ValueError):
    def __init__(self, band, index=None):
        self.band = band
        self.index = index
        msg = f"no sweep rows inside band {band.lo}-{band.hi} MHz"
        if index is not None:
            msg = f"measurement {index}: {msg}"
        super().__init__(msg)


class FormatError(RadioPitError, ValueError):
    """Malformed binary artifact."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class SizeMismatchError(FormatError):
    pass


class GenerationError(RadioPitError, RuntimeError):
    pass


class InsufficientPointsError(RadioPitError, ValueError):
    pass


class DegenerateLossError(RadioPitError, ValueError):
    pass


class NumericError(RadioPitError, ArithmeticError):
    """Non-finite loss or gradient. ``step`` is set when raised from a training loop."""

    def __init__(self, message, *, step=None, groups=()):
        self.step = step
        self.groups = tuple(groups)
        if step is not None:
            message = f"step {step}: {message}"
        if self.groups:
            message = f"{message} (non-finite in: {', '.join(self.groups)})"
        super().__init__(message)


class KrigingError(RadioPitError, ValueError):
    pass


class ComparabilityError(RadioPitError, ValueError):
    pass


class ConfigError(RadioPitError, ValueError):
    pass
