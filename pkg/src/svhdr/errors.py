class ContractError(ValueError):
    """An argument violates a documented precondition."""


class DataError(RuntimeError):
    """Input files are missing, unreadable or malformed."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values."""
