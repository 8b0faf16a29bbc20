
class LnlError(Exception):
    """Base class of all errors raised by noisylabels"""


class ContractViolation(LnlError, ValueError):
    pass


class DomainError(LnlError, ArithmeticError):
    """A numeric primitive received a value outside its domain.

    The offending primitive and the (first) offending index are kept as
    attributes so callers can map them back to samples."""

    def __init__(self, primitive, index, message):
        self.primitive = primitive
        self.index = index
        super().__init__(f"{primitive}: {message} at index {index}")


class TapeError(LnlError, RuntimeError):
    pass


class ParseError(LnlError, ValueError):

    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")


class ValidationError(LnlError, ValueError):

    def __init__(self, report):
        self.report = report
        super().__init__(str(report))


class TrainingError(LnlError, RuntimeError):
    pass


class StageError(LnlError, RuntimeError):

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
