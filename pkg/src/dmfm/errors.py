"""Exception hierarchy shared by every dmfm module."""


class DMFMError(Exception):
    """Base class for all errors raised by dmfm."""


class ValidationError(DMFMError, ValueError):
    """Bad user input: shapes, parameters, configuration."""


class EstimationError(DMFMError, ArithmeticError):
    """A numerical step could not be carried out."""


# input / shape problems
class DimensionMismatch(ValidationError):
    pass


class EmptySeries(ValidationError):
    pass


class SeriesTooShort(ValidationError):
    pass


class RankTooLarge(ValidationError):
    pass


class BadAlpha(ValidationError):
    pass


class BadConfig(ValidationError):
    pass


class PhiMismatch(ValidationError):
    pass


# file formats
class ParseError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class GapError(ValidationError):
    pass


class IoError(DMFMError, OSError):
    pass


# numerical failures
class NotCausal(EstimationError):
    pass


class SingularGamma(EstimationError):
    pass


class SingularGamma0(SingularGamma):
    pass


class SingularGamma1(SingularGamma):
    pass


class SingularUpdate(EstimationError):
    pass


class SingularH(EstimationError):
    pass


class SingularPhi(EstimationError):
    pass


class DegenerateAlignment(EstimationError):
    pass
