"""Exceptions for hqc-shortcuts.

Every error is a `SlackException`, so a failed scenario can be posted to
Slack verbatim.  The three category bases map onto CLI exit statuses.
"""

from typing import override

from safir.slack.blockkit import SlackException, SlackMessage, SlackTextField


class HqcError(SlackException):
    """Base class for all hqc-shortcuts errors."""

    exit_status = 1


class ValidationError(HqcError):
    """Input failed a structural or schema check."""

    exit_status = 2


class PhysicsError(HqcError):
    """A physics guard was violated."""

    exit_status = 3


class IntegrationError(HqcError):
    """Time propagation failed or produced an invalid state."""

    exit_status = 4


class LayoutError(ValidationError):
    """Operator or state dimensions do not match a Hilbert layout."""


class HermiticityError(ValidationError):
    """An operator required to be Hermitian is not."""


class EncodingError(ValidationError):
    """Gate kind and DFS encoding do not fit together."""


class ScheduleError(ValidationError):
    """A pulse schedule is malformed."""


class AsymmetricProgramError(ValidationError):
    """A pair-coupling program is not conjugate-symmetric."""


class ScenarioError(ValidationError):
    """A scenario file does not validate."""

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field


class UnknownAxisError(ValidationError):
    """A sweep axis does not name a numeric scenario field."""


class LevelCrossingError(PhysicsError):
    """Eigenvalue group count changed inside a finite-difference stencil."""


class LoopClosureError(PhysicsError):
    """The dark-state frame does not return to itself."""


class DispersiveGuardError(PhysicsError):
    """A detuning is too small compared with the coupling it mediates."""

    def __init__(self, message: str, guard: str) -> None:
        super().__init__(message)
        self.guard = guard


class InfeasibleProgramError(PhysicsError):
    """No laser assignment realises the requested pair couplings."""


class StepSizeUnderflowError(IntegrationError):
    """The adaptive integrator could not make progress."""


class IntegrationQualityError(IntegrationError):
    """A state diagnostic left its allowed bound."""

    def __init__(self, message: str, time: float, bound: str) -> None:
        super().__init__(message)
        self.time = time
        self.bound = bound

    @override
    def to_slack(self) -> SlackMessage:
        message = super().to_slack()
        message.fields.append(
            SlackTextField(heading="Time", text=f"{self.time:.6g} us")
        )
        message.fields.append(
            SlackTextField(heading="Bound", text=self.bound)
        )
        return message


class PlanNotReadyError(HqcError):
    """A campaign was run or reported before it was planned."""
