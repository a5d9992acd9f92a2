"""Exception hierarchy.

Three branches map onto the CLI exit codes: ConfigError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class PlanarSRError(Exception):
    """Base class for all package errors."""


class ConfigError(PlanarSRError):
    """Invalid configuration or command-line usage."""


class DataError(PlanarSRError):
    """Missing, malformed or inconsistent input data."""


class NumericalError(PlanarSRError):
    """A computation failed or left its domain of validity."""


class DistortionDomainError(NumericalError):
    """No inverse distortion radius exists inside the monotone window."""


class SingularProjectionError(NumericalError):
    """Dehomogenization hit a (near-)zero homogeneous scale."""


class DegenerateConfigurationError(DataError):
    """Point configuration does not constrain the estimate (e.g. collinear)."""


class InsufficientViewsError(DataError):
    """Fewer views than the estimator needs."""


class IllConditionedError(NumericalError):
    """Estimation system is numerically too ill-conditioned to trust."""


class EmptyOverlapError(DataError):
    """Frames cover too little of the target grid."""


class DivergenceError(NumericalError):
    """Iterative refinement produced non-finite cost."""
