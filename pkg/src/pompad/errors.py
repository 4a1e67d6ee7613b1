"""Exception hierarchy shared by all pompad modules.

The split matters for the command-line harness: ``UsageError`` maps to
exit code 1, every other ``PompadError`` to exit code 2.
"""


class PompadError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(PompadError):
    """Caller misused an API or the CLI (bad argument, wrong tape, ...)."""


class DomainError(PompadError):
    """A differentiable operation was evaluated outside its domain.

    Raised immediately rather than letting NaN propagate: a silent NaN
    inside a particle filter corrupts the whole run invisibly.
    """

    def __init__(self, op: str, value):
        self.op = op
        self.value = value
        super().__init__(f"domain violation in op '{op}': offending value {value!r}")


class ParameterDomainError(PompadError):
    """A model parameter is outside its valid natural-space domain."""


class SimulationBlowupError(PompadError):
    """A simulated state component became non-finite."""

    def __init__(self, component: str, time: float):
        self.component = component
        self.time = time
        super().__init__(f"non-finite state component '{component}' at t={time}")


class DegenerateFilterError(PompadError):
    """All particle weights vanished at some time step (particle depletion)."""

    def __init__(self, time_index: int, message: str = ""):
        self.time_index = time_index
        detail = f" ({message})" if message else ""
        super().__init__(f"degenerate filter at observation {time_index}{detail}")


class DegenerateModelError(PompadError):
    """A model configuration admits no valid likelihood (e.g. zero total variance)."""


class NumericalError(PompadError):
    """A numerical routine (eigendecomposition, ...) failed to converge."""


class OptimizationAbortError(PompadError):
    """An optimizer stopped because estimates became non-finite."""

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)
