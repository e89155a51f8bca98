"""Exception types shared across the package."""


class ParamsError(ValueError):
    """Invalid model parameters (drift/boundary/population coupling)."""


class DomainError(ValueError):
    """Argument outside the spatial or temporal domain of an operator."""


class KernelFloorError(RuntimeError):
    """Spectral kernel cannot certify the requested tolerance at this time.

    Signals the caller to fall back to short-time simulation instead of
    trusting a truncated eigen-sum.
    """


class PopulationCapError(RuntimeError):
    """A replica exceeded the configured memory guard."""
