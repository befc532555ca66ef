"""Exception hierarchy.

Every error carries the CLI exit code it maps to: data problems exit with 2,
numerical failures with 3.
"""


class VcError(Exception):
    exit_code = 2


class DataError(VcError):
    exit_code = 2


class NumericalError(VcError):
    exit_code = 3


# audio / corpus
class FormatError(DataError):
    pass


class UnsupportedCodecError(DataError):
    pass


class EmptySignalError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class RateMismatchError(DataError):
    pass


# lpc
class SizeError(DataError):
    pass


class DegenerateSignalError(NumericalError):
    pass


class InstabilityError(NumericalError):
    pass


class OrderingError(DataError):
    pass


class SynthesisDivergenceError(NumericalError):
    pass


# glottal
class TooShortError(DataError):
    pass


class FrameKindError(DataError):
    pass


# align
class ShapeError(DataError):
    pass


class EmptyInputError(DataError):
    pass


# gmm
class DegenerateDataError(NumericalError):
    pass


class NumericalFailureError(NumericalError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConditioningError(NumericalError):
    pass


# conversion
class InsufficientDataError(DataError):
    pass


class IncompatibleModelError(DataError):
    pass


class ModelParseError(DataError):
    pass


# eval
class UndefinedReferenceError(DataError):
    pass


class NoSpeechError(DataError):
    pass


# cli
class ConfigError(VcError):
    """Malformed or unknown configuration; reported as a usage error."""
    exit_code = 1
