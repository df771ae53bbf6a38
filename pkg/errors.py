"""
Exception hierarchy for the bit-flip verifier.

Input-validation errors also derive from ValueError so callers that only
catch ValueError keep working.
"""


class VerifierError(Exception):
    """Base class for every error raised by the verifier."""


class ModelParseError(VerifierError, ValueError):
    """Model, property or witness file is malformed or violates its schema."""


class ShapeError(VerifierError, ValueError):
    """Layer dimensions do not chain, or an input has the wrong length."""


class RangeError(VerifierError, ValueError):
    """An integer parameter lies outside the Q-bit range."""


class ConfigurationError(VerifierError, ValueError):
    """Invalid settings, job description or analysis request."""


class AttackError(VerifierError, ValueError):
    """Attack vector or symbolic binding does not fit the network."""


class ConvLoweringError(VerifierError, ValueError):
    """Convolution geometry that cannot be lowered to an affine layer."""


class WitnessError(VerifierError, ValueError):
    """Witness cannot be replayed against the given network."""


class BoundsError(VerifierError, RuntimeError):
    """The bounds pass produced non-finite bounds for the MILP encoding."""


class BaselineRejectedError(VerifierError):
    """The unattacked network does not satisfy the property under DeepPoly."""
