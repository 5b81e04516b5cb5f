"""Exception and warning classes shared across the package."""


class IMLError(Exception):
    pass


class ModelError(IMLError, ValueError):
    pass


class SymmetryViolation(ModelError):
    pass


class NegativeRate(ModelError):
    pass


class Disconnected(ModelError):
    pass


class EigensolveFailure(IMLError, RuntimeError):
    pass


class LevelTooLarge(IMLError, ValueError):
    pass


class BadDims(IMLError, ValueError):
    pass


class BadAlpha(IMLError, ValueError):
    pass


class ShapeMismatch(IMLError, ValueError):
    pass


class BadPermutation(IMLError, ValueError):
    pass


class NegativeInput(IMLError, ValueError):
    pass


class MassMismatch(IMLError, ValueError):
    pass


class RLargerThanA(IMLError, ValueError):
    pass


class BadContainment(IMLError, ValueError):
    pass


class TooLarge(IMLError, ValueError):
    pass


class PathKilled(IMLError, ValueError):
    pass


class AcceptanceTooLow(IMLError, RuntimeError):
    pass


class NotProbability(IMLError, ValueError):
    pass


class SingularSmoother(IMLError, RuntimeError):
    pass


class NonConvergence(IMLError, RuntimeError):
    pass


class SchemaError(IMLError, ValueError):
    pass


class ContractFailure(IMLError, RuntimeError):
    pass


class FlatWindowWarning(UserWarning):
    """Log-log fit slope indistinguishable from zero (finite-space saturation)."""


class HeavyTailWarning(UserWarning):
    """Exponential-moment estimate dominated by a handful of samples."""


class KernelFloorWarning(UserWarning):
    """Kernel entry more negative than the numerical zero floor."""
