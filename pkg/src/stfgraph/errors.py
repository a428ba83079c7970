"""Exception hierarchy shared by all subsystems."""


class StfGraphError(Exception):
    """Base class for every error raised by this package."""


class EmptyRegion(StfGraphError):
    """A mask selected no pixel with valid depth, or a point cloud is empty."""


class DimensionMismatch(StfGraphError):
    pass


class StaleStep(StfGraphError):
    pass


class UnknownObject(StfGraphError):
    pass


class UnsatisfiableGoal(StfGraphError):
    pass


class UnresolvedTarget(StfGraphError):
    pass


class ReplanBudgetExhausted(StfGraphError):
    pass


class RemoteError(StfGraphError):
    """Base for failures of the remote planning backend."""


class Transport(RemoteError):
    pass


class RemoteTimeout(RemoteError):
    pass


class MalformedDirective(RemoteError):
    def __init__(self, message, kind="schema_violation"):
        super().__init__(message)
        self.kind = kind


class ReplayDivergence(StfGraphError):
    def __init__(self, step, message=""):
        super().__init__(f"replay diverged at step {step}: {message}")
        self.step = step
