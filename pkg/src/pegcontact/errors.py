"""Exception types raised across the package."""


class PegContactError(Exception):
    """Base class for all package errors."""


class InvalidGeometryError(PegContactError, ValueError):
    pass


class SimulationDivergedError(PegContactError):
    """Non-finite state or Euler-angle singularity reached during stepping."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class ApproachFailedError(PegContactError):
    pass


class InvalidWindowError(PegContactError, ValueError):
    pass


class ShapeError(PegContactError, ValueError):
    pass


class TrainingDivergedError(PegContactError):
    pass


class IncompatibleModelError(PegContactError):
    pass


class ConfigError(PegContactError, ValueError):
    pass
