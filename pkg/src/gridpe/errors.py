"""Exception types raised across the package."""


class GridPEError(Exception):
    """Base class for all package errors."""


class DomainError(GridPEError, ValueError):
    """An argument lies outside the domain of a function."""


# transfer fitting

class SingularFit(GridPEError):
    """The Gompertz Jacobian is rank deficient at every damping level tried."""


class DegenerateDesign(GridPEError):
    """Too few distinct N rates to identify a quadratic."""


# production / market

class CalibrationError(GridPEError):
    pass


class CellNoConvergence(GridPEError):
    def __init__(self, message, cell_ids=(), residuals=()):
        super().__init__(message)
        self.cell_ids = tuple(cell_ids)
        self.residuals = tuple(residuals)


class NoConvergence(GridPEError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class NonFiniteResidual(GridPEError):
    def __init__(self, message, prices=None):
        super().__init__(message)
        self.prices = prices


class MisuseError(GridPEError):
    """An operation was applied to the wrong kind of object."""


class MissingKey(GridPEError, KeyError):
    pass


# io

class ParseError(GridPEError):
    def __init__(self, path, line, column, message):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.path = str(path)
        self.line = line
        self.column = column


class SchemaMismatch(GridPEError):
    def __init__(self, path, missing=(), unknown=()):
        parts = []
        if missing:
            parts.append("missing column(s) " + ", ".join(missing))
        if unknown:
            parts.append("unknown column(s) " + ", ".join(unknown))
        super().__init__(f"{path}: " + "; ".join(parts))
        self.path = str(path)
        self.missing = tuple(missing)
        self.unknown = tuple(unknown)


class ValidationFailed(GridPEError):
    def __init__(self, report):
        lines = "\n".join(f"  {v}" for v in report[:20])
        super().__init__(f"model failed validation ({len(report)} violations)\n{lines}")
        self.report = report
