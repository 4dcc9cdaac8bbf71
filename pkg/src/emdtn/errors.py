"""Exception hierarchy shared by all modules."""


class EmdtnError(Exception):
    """Base class for every error raised by the package."""


class ZeroLeadingCoefficient(EmdtnError):
    pass


class NonPositiveLeadingCoefficient(EmdtnError):
    pass


class JetOrderExhausted(EmdtnError):
    """A computation needed more Taylor coefficients than the jets carry."""


class NonPositiveDefinite(EmdtnError):
    pass


class NonPositiveParameter(EmdtnError):
    pass


class CoincidentPoints(EmdtnError):
    pass


class ShapeMismatch(EmdtnError):
    pass


class ScenarioMismatch(EmdtnError):
    pass


class ZeroCovector(EmdtnError):
    pass


class InsufficientDepth(EmdtnError):
    pass


class DepthUnavailable(EmdtnError):
    pass


class DegenerateDesignSet(EmdtnError):
    pass


class InconsistentSamples(EmdtnError):
    pass


class DesignSingular(EmdtnError):
    pass


class NearDegenerateCovector(EmdtnError):
    pass


class ForwardMismatch(EmdtnError):
    pass


class InputError(EmdtnError):
    """Malformed file or command-line input."""
