"""Exception types shared across the package."""


class GridMismatchError(ValueError):
    """Operands live on different grids."""


class VacuumProximityError(RuntimeError):
    """Density perturbation approaches vacuum (1 + a below safety floor)."""


class BlowUpError(RuntimeError):
    """Non-finite values appeared during time integration."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InsufficientSignalError(ValueError):
    """Requested quantity falls below the usable noise floor."""


class WindowError(ValueError):
    """Fit window is empty, inverted or outside the validity horizon."""


class ConfigError(ValueError):
    """Invalid experiment or suite configuration."""
