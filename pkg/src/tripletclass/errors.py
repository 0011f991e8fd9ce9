"""Exception hierarchy.

Every error carries a short upper-case ``code`` so the CLI can print a single
machine-parsable line (``error: <CODE>: <message>``) and map it to an exit status.
"""


class TripletClassError(Exception):
    code = "ERROR"
    exit_status = 1


class ConfigurationError(TripletClassError):
    code = "CONFIG"
    exit_status = 2


class ValidationError(TripletClassError):
    code = "VALIDATION"
    exit_status = 3


class DataError(TripletClassError):
    code = "DATA"
    exit_status = 4

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ContractError(TripletClassError, ValueError):
    """Shapes, dims or labels that violate an operation's preconditions."""

    code = "CONTRACT"
    exit_status = 5


class NumericalError(TripletClassError, ArithmeticError):
    code = "NUMERICAL"
    exit_status = 6


class SamplingError(TripletClassError):
    code = "SAMPLING"
    exit_status = 7


class MiningError(SamplingError):
    code = "MINING"


class TrainingError(TripletClassError):
    code = "TRAINING"
    exit_status = 8

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class IntegrityError(TripletClassError):
    code = "INTEGRITY"
    exit_status = 9

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)
