"""Error types raised across the package.

Every error derives from :class:`ScaleMoEError` and additionally from the
closest builtin (``ValueError``, ``IndexError``, ``OSError``) so callers that
only know the builtin hierarchy still catch them.
"""


class ScaleMoEError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(ScaleMoEError, ValueError):
    pass


class InvalidHyperparameter(ScaleMoEError, ValueError):
    pass


class InvalidAxis(ScaleMoEError, ValueError):
    pass


class NonScalarLoss(ScaleMoEError, ValueError):
    pass


class GraphConsumed(ScaleMoEError, RuntimeError):
    pass


class NonFiniteInput(ScaleMoEError, FloatingPointError):
    pass


class DegenerateBatch(ScaleMoEError, ValueError):
    pass


class BadResolution(ScaleMoEError, ValueError):
    pass


class UnknownToken(ScaleMoEError, ValueError):
    pass


class EmptyReport(ScaleMoEError, ValueError):
    pass


class InvalidLevel(ScaleMoEError, ValueError):
    pass


class IndexOutOfRange(ScaleMoEError, IndexError):
    pass


class InvalidTemperature(ScaleMoEError, ValueError):
    pass


class NonNormalizedInput(ScaleMoEError, ValueError):
    pass


class LabelOutOfRange(ScaleMoEError, ValueError):
    pass


class InvalidConfig(ScaleMoEError, ValueError):
    pass


class IoFailure(ScaleMoEError, OSError):
    pass


class CorruptRecord(ScaleMoEError, ValueError):
    pass


class NonFiniteLoss(ScaleMoEError, FloatingPointError):
    """Training produced a NaN/Inf loss; ``step`` names the offending step."""

    def __init__(self, step, value=None):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")


class MissingPrompt(ScaleMoEError, KeyError):
    pass


class InsufficientData(ScaleMoEError, ValueError):
    pass
