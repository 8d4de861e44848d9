"""Exception hierarchy shared by all modules."""


class MinimaxDesignError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MinimaxDesignError, ValueError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


class DomainError(MinimaxDesignError, ValueError):
    """Argument outside the support, range, or probability interval."""


class DegenerateBasisError(MinimaxDesignError, ValueError):
    pass


class InvalidWeightError(MinimaxDesignError, ValueError):
    pass


class CalibrationError(MinimaxDesignError, ValueError):
    pass


class DegenerateDesignError(MinimaxDesignError, ValueError):
    pass


class IllPosedRiskError(MinimaxDesignError, ValueError):
    """Design density too close to zero for the asymptotic risk to be finite."""


class UnderdeterminedError(MinimaxDesignError, ValueError):
    pass


class NumericalError(MinimaxDesignError, RuntimeError):
    """Internal numerical failure (CLI exit code 1)."""
