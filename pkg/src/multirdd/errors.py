"""Exception taxonomy.

Two families matter for callers (and for CLI exit codes): problems with
the inputs themselves (files, schemas, configuration) and problems with
identification or numerical rank discovered during estimation.
"""


class MultirddError(Exception):
    """Base class for all package errors."""


class InputError(MultirddError):
    """Bad file, schema, or configuration. CLI exit code 1."""


class SchemaError(InputError):
    """A required column is missing or the schema mapping is inconsistent."""


class ParseError(InputError):
    """A cell could not be parsed; the message cites the data row."""


class EstimationError(MultirddError):
    """Identification, relevance, or rank failure. CLI exit code 2."""


class CellUnusableError(EstimationError):
    """A covariate cell lacks usable support on one side of the cutoff."""

    def __init__(self, label: str, side: str, detail: str = ""):
        self.label = label
        self.side = side
        msg = f"cell {label!r} unusable on the {side} side of the cutoff"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class RelevanceError(EstimationError):
    """The first-stage discontinuity matrix is (numerically) singular."""


class UnderIdentifiedError(EstimationError):
    """More endogenous columns than instruments."""


class SingularDesignError(EstimationError):
    """A design or weighting matrix fell below the rcond threshold."""
