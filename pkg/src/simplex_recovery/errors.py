"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """A caller broke an operation's precondition (shapes, ranges, state)."""


class NumericalError(ArithmeticError):
    """A numerical routine hit a singular or indefinite quantity."""


class UnrecoverableEpisode(RuntimeError):
    """The episode cannot proceed to recovery; the harness records the reason."""


class PlannerError(RuntimeError):
    """A planner could not produce a target set."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason
