"""Exception hierarchy.

Every error raised deliberately by the package derives from `HBRError`; the
CLI maps the three families below onto exit codes.
"""


class HBRError(Exception):
    """Base class for package errors."""


# -- configuration / contract errors (CLI exit code 2) ---------------------

class ConfigError(HBRError, ValueError):
    pass


class DomainError(HBRError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class InvalidShapeError(HBRError, ValueError):
    """Invalid link shape parameter (kappa < 0, r_nb <= 0, ...)."""


class ShapeError(HBRError, ValueError):
    """Array lengths or dimensions do not agree."""


class SpecError(HBRError, ValueError):
    """Auxiliary or model specification is invalid."""


class StateError(HBRError, ValueError):
    """A model state lacks a component required by the model kind."""


class UnsupportedModelError(HBRError, ValueError):
    pass


class UndefinedQuantityError(HBRError, ValueError):
    """A requested functional is undefined (zero slope, zero norm, ...)."""


class ScoreError(HBRError, ValueError):
    pass


# -- ingestion errors (CLI exit code 3) ------------------------------------

class IngestionError(HBRError, ValueError):
    """Problem with an input table.  ``line`` is the 1-based file line."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DegenerateGeometryError(IngestionError):
    pass


class DisconnectedGraphError(IngestionError):
    pass


# -- numerical failures (CLI exit code 4) ----------------------------------

class NumericalError(HBRError, ArithmeticError):
    pass


class SaturationError(NumericalError):
    """Probability at machine 0 or 1 where a link must be inverted."""


class NotPositiveDefiniteError(NumericalError):
    pass


class InitializationError(NumericalError):
    pass
