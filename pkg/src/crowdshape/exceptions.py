"""Exception hierarchy shared by all crowdshape modules."""


class CrowdShapeError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(CrowdShapeError, ValueError):
    """An argument violates an operation's preconditions."""


class ContractViolationError(CrowdShapeError, ValueError):
    """A control input exceeds its admissible bound."""


class IllConditionedExpansionError(CrowdShapeError, ValueError):
    """A polynomial expansion was requested where the field is near-singular."""


class NumericalFailure(CrowdShapeError, ArithmeticError):
    """Base class for integrator and solver blowups.

    ``record`` carries whatever partial trajectory was produced before the
    failure, when the caller had one.
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class IntegrationBlowupError(NumericalFailure):
    pass


class SolverBlowupError(NumericalFailure):
    pass


class ConfigError(CrowdShapeError, ValueError):
    """Scenario file could not be parsed or failed validation.

    ``problems`` lists every violation found, not only the first.
    """

    def __init__(self, message, problems=None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join("  - " + p for p in self.problems)
        super().__init__(message)
