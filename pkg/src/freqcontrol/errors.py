"""Exception hierarchy shared by all modules."""


class FreqControlError(Exception):
    """Base class for every error raised by this package."""


class InputError(FreqControlError, ValueError):
    """Invalid arguments: dimension mismatch, bad bounds, non-positive parameters."""


class ScenarioError(InputError):
    """A scenario document failed validation.

    ``problems`` lists every offending field as ``"path: message"`` strings.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.problems))


class NumericalError(FreqControlError, ArithmeticError):
    """A numerical procedure failed."""


class PowerFlowInfeasibleError(NumericalError):
    """The power flow equations have no solution reachable from flat start."""


class OfcInfeasibleError(NumericalError):
    """The optimal frequency control problem is infeasible or unbounded."""


class NumericalBlowupError(NumericalError):
    """The integrated state became non-finite."""
