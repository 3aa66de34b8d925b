"""Exception hierarchy shared by all modules."""


class MabesovError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(MabesovError, ValueError):
    """An argument is outside its admissible range."""


class DomainError(MabesovError, ValueError):
    """A point lies outside the domain box of the potential."""


class StrictConvexityError(MabesovError):
    """The Hessian of the potential is not positive definite somewhere."""


class InsufficientDataError(MabesovError):
    """Too few valid samples to estimate a quantity."""


class ScaleError(MabesovError):
    """A dyadic scale does not fit the discretized domain."""


class DegenerateInputError(MabesovError, ValueError):
    """The input has zero norm where a nonzero one is required."""


class DivergenceError(MabesovError):
    """An iterative method failed to converge."""


class AdmissibilityError(MabesovError, ValueError):
    """A Besov smoothness index violates the admissible range."""


class ResolutionError(MabesovError):
    """A section contains too few grid nodes."""


class NormalizationError(MabesovError):
    """No affine map sandwiching the section could be found."""


class StructuralError(MabesovError, ValueError):
    """Two objects that must share a grid do not."""


class ConfigError(MabesovError, ValueError):
    """The experiment configuration is malformed or inadmissible."""
