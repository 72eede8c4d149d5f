"""Exception hierarchy shared across the toolkit.

CLI exit-code mapping: ValidationError -> 2, DegenerateStatisticsError -> 3.
"""


class QsdlabError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(QsdlabError):
    """Bad inputs: config keys, preconditions, incompatible shapes."""


class ThinningBoundError(QsdlabError):
    """An evaluated event rate exceeded its declared bound.

    Raised instead of clipping: silent clipping would bias extinction-rate
    estimates.
    """


class SimulationFault(QsdlabError):
    """Non-finite state encountered; carries the partial path."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateStatisticsError(QsdlabError):
    """An estimator ran out of survivors (or equivalent degeneracy)."""


class SpectralConvergenceError(QsdlabError):
    """Power iteration did not converge: spectral gap too small."""


class IllConditionedTransformError(QsdlabError):
    """An eigenfunction entry is too close to zero for the h-transform."""


class SurvivalUnderflowError(QsdlabError):
    """Total survival mass underflowed; retry with a smaller time."""
