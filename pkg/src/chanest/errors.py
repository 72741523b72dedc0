"""Exception types shared across the package."""


class ChanestError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(ChanestError):
    """Operator and vector shapes are inconsistent."""


class InvalidParams(ChanestError):
    """A parameter container violates its constraints."""


class QuantizeNaN(ChanestError):
    """Quantizer input contains NaN."""


class InvalidBitDepth(ChanestError):
    """Requested bit depth is not a positive integer."""


class NumericalDivergence(ChanestError):
    """Iterates became non-finite; carries a diagnostic message."""


class ChannelEvaluationError(ChanestError):
    """A channel moment computation failed; wraps the underlying cause."""


class ParamUpdateFailure(ChanestError):
    """A maximization step could not improve its objective."""


class DegenerateSignal(ChanestError):
    """Noiseless reference signal has zero energy; SNR is undefined."""


class ZeroReference(ChanestError):
    """NMSE reference vector has zero norm."""


class DivergenceDetected(ChanestError):
    """Iterative solver residual grew far beyond its initial value."""


class ConfigError(ChanestError):
    """Experiment configuration is malformed; message names the offending field."""


class EmptyInput(ChanestError):
    """An aggregation step received no records."""


class CgStagnation(UserWarning):
    """Conjugate gradient hit its iteration cap before reaching tolerance."""
