"""Exception hierarchy shared across modules."""


class CommlimError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(CommlimError, ValueError):
    """A parameter lies outside the family's parameter space."""


class SingularFisherError(CommlimError, ValueError):
    """Fisher information is singular at a boundary reference point."""


class CapacityError(CommlimError):
    """An exhaustive enumeration would exceed the desk-scale cap."""


class UnsupportedEnumerationError(CommlimError):
    """Predicates have no closed-form expectation (e.g. callbacks)."""


class InsufficientBudgetError(CommlimError, ValueError):
    """The protocol cannot cover all coordinates with n*k bits."""


class DecodeError(CommlimError, ValueError):
    """Transcripts do not match the shape the protocol produces."""


class InapplicableBoundError(CommlimError, ValueError):
    """A bound's precondition fails, so the bound says nothing."""


class RankDeficientError(CommlimError, ValueError):
    """Regressor matrix does not have full column rank."""


class NoFinitePsi2Error(CommlimError, ValueError):
    """The distribution is not sub-Gaussian (psi_2 norm is infinite)."""


class ConfigError(CommlimError, ValueError):
    """Experiment configuration failed validation."""

    def __init__(self, message: str, key_path: str = ""):
        super().__init__(message)
        self.key_path = key_path
