"""Exception and warning types shared across the package."""


class CausalFuseError(Exception):
    """Base class for errors raised by causalfuse."""


class DataError(CausalFuseError, ValueError):
    """Input data or schema violates a dataset invariant."""


class NumericalError(CausalFuseError, RuntimeError):
    """A solver failed or a required matrix is singular."""


class EstimationWarning(RuntimeWarning):
    """Non-fatal numerical anomaly such as trimming or separation."""
