"""Exception types shared across the package."""


class SVMError(Exception):
    """Base class for all errors raised by svmeuler."""


class ConfigError(SVMError):
    """Invalid configuration (bad sizes, m >= n, unknown keys, ...).

    ``problems`` holds every violation found, not only the first.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(SVMError):
    """Input data violates a field invariant (reality, zero mean, format)."""


class ContractError(SVMError):
    """An operation was called outside its precondition."""


class NumericalAbort(SVMError):
    """Non-finite values appeared during time stepping.

    ``state`` is the last valid solver state, kept for the diagnostic dump.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ExperimentError(SVMError):
    """An experiment could not produce a meaningful result."""
