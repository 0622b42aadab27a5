"""Exception types shared across the package."""


class AdaptraceError(Exception):
    """Base class for all package-specific errors."""


class ParseError(AdaptraceError):
    """Malformed input file or row."""


class InvariantViolation(AdaptraceError):
    """A data-structure invariant failed validation.

    Carries the failed invariant name and, where applicable, the
    offending row/sample index.
    """

    def __init__(self, invariant: str, index: int | None = None):
        self.invariant = invariant
        self.index = index
        msg = invariant if index is None else f"{invariant} (row {index})"
        super().__init__(msg)


class InfeasibleGeometry(AdaptraceError):
    """Requested synthetic track parameters cannot produce a valid track."""


class SingularTransform(AdaptraceError):
    """Frenet transform evaluated where 1 - n*kappa <= 0."""


class OffTrackProjection(AdaptraceError):
    """Point too far from the reference line to project reliably."""


class HorizonExhausted(AdaptraceError):
    """Committed trajectory is shorter than the replanning interval."""


class DegenerateHorizon(AdaptraceError):
    """Polynomial horizon too short to be meaningful."""


class NoFeasibleTrajectory(AdaptraceError):
    """Every candidate trajectory violated at least one hard constraint."""


class InvalidScenario(AdaptraceError):
    """Scenario configuration violates its invariants."""


class EmptyInput(AdaptraceError):
    """An aggregate operation received no data."""


class ShapeMismatch(AdaptraceError):
    """Tensor shapes incompatible with the network specification."""


class IncompleteBuffer(AdaptraceError):
    """Rollout buffer missing data required for advantage computation."""


class NonFiniteLoss(AdaptraceError):
    """A training update produced a non-finite loss."""


class CheckpointMismatch(AdaptraceError):
    """Checkpoint incompatible with the current network or normalization."""


class MissingLogs(AdaptraceError):
    """Report bundle lacks the episode logs needed for a report."""
