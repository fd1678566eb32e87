"""Exception hierarchy shared by every module."""


class EtnodeError(Exception):
    """Base class for all package errors."""


class ShapeError(EtnodeError, ValueError):
    pass


class NumericError(EtnodeError, ArithmeticError):
    pass


class ContractError(EtnodeError, ValueError):
    """A documented precondition was violated by the caller."""


class OracleError(EtnodeError):
    """A finite-difference probe saw a non-deterministic function."""


class SolverError(EtnodeError, RuntimeError):
    pass


class SchemaError(EtnodeError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ParseError(EtnodeError, ValueError):
    pass


class IoError(EtnodeError, OSError):
    pass
