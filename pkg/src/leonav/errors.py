"""Exception hierarchy.

Three families map onto CLI exit codes: configuration problems (2), bad or
insufficient input data (3) and numerical failures such as divergence (4).
"""


class LeoNavError(Exception):
    exit_code = 1


class ConfigError(LeoNavError):
    exit_code = 2


class DataError(LeoNavError):
    exit_code = 3


class NumericalError(LeoNavError):
    exit_code = 4


# tle
class ChecksumMismatch(DataError):
    def __init__(self, line_number, expected, found):
        super().__init__(f"checksum mismatch on line {line_number}: expected {expected}, found {found}")
        self.line_number = line_number


class MalformedField(DataError):
    def __init__(self, line_number, columns, text=""):
        lo, hi = columns
        super().__init__(f"malformed field on line {line_number}, columns {lo}-{hi}: {text!r}")
        self.line_number = line_number
        self.columns = columns


class TruncatedRecord(DataError):
    pass


class DuplicateNoradId(DataError):
    pass


# propagation / visibility
class StaleElements(DataError):
    pass


class DecayedOrbit(DataError):
    pass


class InsufficientVisibility(DataError):
    pass


# frames / observables
class ConvergenceError(NumericalError):
    pass


class ZeroRange(NumericalError):
    pass


# spectral
class NyquistViolation(ConfigError):
    pass


class NoRidge(DataError):
    pass


class DegenerateTimes(DataError):
    pass


class NeverVisible(DataError):
    pass


class AssociationRejected(DataError):
    pass


# inertial / fusion / bound
class GimbalLock(NumericalError):
    pass


class CovarianceBlowup(NumericalError):
    pass


class SingularInnovation(NumericalError):
    pass


class SingularInformation(NumericalError):
    pass


class KindModeMismatch(ConfigError):
    pass


class TimestampMismatch(DataError):
    pass
