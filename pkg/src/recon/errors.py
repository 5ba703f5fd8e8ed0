class ReconError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(ReconError, ValueError):
    pass


class NearSingular(ReconError):
    """0 is (numerically) a Dirichlet eigenvalue of -Delta + q."""


class TauTooLarge(ReconError):
    """The weight zeta**tau exceeds the dynamic-range guard."""


class MaskViolation(ReconError):
    """Out-of-mask access to the partial Dirichlet-to-Neumann data."""


class NotContracting(ReconError):
    """Neumann iteration requested where ||G q|| >= 1."""


class IllConditioned(ReconError):
    """Boundary integral equation too ill-conditioned at this tau."""


class StageError(ReconError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"stage {stage!r} failed: {type(error).__name__}: {error}")
        self.stage = stage
