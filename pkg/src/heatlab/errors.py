"""Exception types shared across the laboratory.

The CLI maps DomainError subclasses to exit code 1 and argument problems
to exit code 2, so every error raised by library code should derive from
one of the classes below.
"""


class HeatError(Exception):
    """Base class for all heatlab errors."""


class DomainError(HeatError):
    """A well-formed request that cannot be satisfied (exit code 1)."""


class ContractViolation(HeatError):
    """Caller broke a documented precondition (bad index, shape, version)."""


class FamilyTooLargeError(DomainError):
    """Requested more morphology masks than the slot count allows."""


class IncompatibleComponentsError(DomainError):
    """Component MDPs disagree on action count, discount, or alphabet."""


class InconsistentObservationError(DomainError):
    """A belief update conditioned on a zero-likelihood observation."""


class SearchSpaceTooLargeError(DomainError):
    """Joint-policy enumeration would exceed the configured cap."""


class StaleTrajectoryError(ContractViolation):
    """A gradient update was attempted with trajectories collected under
    older parameters.  Recurrent hidden states are a function of the
    parameters, so such trajectories are invalid training data."""
