# engine/errors.py

"""Exception hierarchy shared by the design engine.

Library code raises these; ``cli.py`` turns them into exit codes.
"""


class EngineError(Exception):
    """Base class for every error raised by the engine."""


class DomainError(EngineError, ValueError):
    """An argument lies outside the domain of the operation."""


class UnsupportedWeightError(DomainError):
    """A weight cannot be handled by the requested predictor."""


class DegenerateError(EngineError):
    """A statistic or design has no information (zero variance, no events)."""


class InconsistentCorrelationError(EngineError):
    """An assembled correlation matrix is too far from positive semidefinite."""


class InfeasibleStageError(EngineError):
    """A stage cannot be reached or has nothing to spend."""


class SolverError(EngineError, RuntimeError):
    """A root finder failed to bracket or converge."""


class NoEffectError(EngineError):
    """The alternative carries no drift, so no finite sample size exists."""


class ConfigError(EngineError, ValueError):
    """A config file is missing a key or holds an invalid value."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")
