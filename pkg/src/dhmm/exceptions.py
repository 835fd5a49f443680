"""Exception types shared across the package."""


class DhmmError(Exception):
    """Base class for all package-specific errors."""


class NonIrreducible(DhmmError):
    """Transition matrix is not irreducible (its directed graph is not strongly connected)."""


class NumericalFailure(DhmmError):
    """A linear solve or eigen computation failed beyond tolerance."""


class LayoutMismatch(DhmmError):
    """Parameter vector does not match the expected block layout."""


class DomainError(DhmmError):
    """An observation lies outside the model's observation space."""


class DimensionMismatch(DhmmError):
    """Inputs have incompatible shapes or lengths."""


class WrongModelKind(DhmmError):
    """Operation is only defined for a different model family."""


class TooLarge(DhmmError):
    """Brute-force path enumeration would exceed the safety cap."""


class InvalidParams(DhmmError):
    """Parameter values violate model constraints."""


class AllStartsFailed(DhmmError):
    """Every optimizer start returned a degenerate (-inf) objective."""


class NonFinite(DhmmError):
    """The objective returned NaN; carries the offending parameter vector."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class StepTooLarge(DhmmError):
    """Finite-difference step produced value changes below the noise floor."""
