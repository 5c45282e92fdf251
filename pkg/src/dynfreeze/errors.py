"""Exception types raised across the package."""


class ConstructionError(ValueError):
    """An object could not be built from the given parameters."""


class PreconditionError(ValueError):
    """A function was called outside the regime its formula is valid for."""


class CapacityError(RuntimeError):
    """The requested system is too large for the chosen backend."""


class NumericalError(RuntimeError):
    """A numerical invariant (norm, spin length) drifted beyond tolerance."""


class FitError(RuntimeError):
    """A least-squares fit failed or the data carry no usable signal."""

    def __init__(self, message, residual_norm=None):
        super().__init__(message)
        self.residual_norm = residual_norm


class DegenerateSpectrumWarning(UserWarning):
    """Quasi-energy degeneracies make a diagonal-ensemble value basis dependent."""


class ConfigError(ValueError):
    """A run configuration failed schema validation."""

    def __init__(self, message, path=()):
        super().__init__(message)
        self.path = tuple(path)
