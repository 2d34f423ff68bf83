class ConvergenceError(RuntimeError):
    """A numerical procedure failed to reach its requested tolerance.

    ``details`` carries whatever diagnostic values the caller found useful
    (ladder values, successive refinements, offending indices).
    """

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class NearSingularError(ConvergenceError):
    """A Birman-Schwinger matrix is numerically singular."""
