"""Exception and warning types shared across the package."""


class LightDiffusionError(Exception):
    """Base class for all package errors."""


class ValidationError(LightDiffusionError, ValueError):
    """An input violated a documented precondition."""


class UndefinedGiniError(ValidationError):
    """Gini coefficient requested for a map with zero total luminance."""


class DegenerateLightingError(ValidationError):
    """Source lighting is already as diffuse as the fully diffused lighting."""


class SaturatedShadowError(ValidationError):
    """A shadow value of 1 destroyed the information needed for inversion."""


class DegenerateTintError(ValidationError):
    """A tint component is too small to divide out."""


class TrainingDivergedError(LightDiffusionError, RuntimeError):
    """Loss became non-finite during optimisation."""


class ClampWarning(UserWarning):
    """A value outside its documented range was clamped."""
