"""Exception hierarchy for the satdn reconstruction pipeline."""


class SatDNError(Exception):
    """Base class for every error raised by the pipeline."""
    pass


class ConfigError(SatDNError):
    """Configuration file or CLI option failed validation."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


class DatasetError(SatDNError):
    """A dataset file (manifest, RPC, image, CSV) is missing or malformed."""
    pass


class OutOfDomainError(SatDNError):
    """Input left the valid box of a camera model or scene by more than the margin."""
    pass


class DegenerateDenominatorError(SatDNError):
    """An RPC denominator evaluated to (almost) zero."""
    pass


class NoConvergenceError(SatDNError):
    """Iterative RPC localization did not converge."""
    pass


class DegenerateJacobianError(SatDNError):
    """The localization Jacobian became singular."""
    pass


class NonFiniteError(SatDNError):
    """A NaN or Inf appeared in field activations, losses or gradients."""
    pass


class DegenerateFitError(SatDNError):
    """Scale/offset fit is underdetermined."""
    pass


class EmptySurfaceError(SatDNError):
    """The SDF grid has no sign change, so there is no surface to extract."""
    pass


class GridMismatchError(SatDNError):
    """Two DSMs do not share the same grid specification."""
    pass


class NoOverlapError(SatDNError):
    """Two DSMs have no jointly valid cell."""
    pass


class EmptySetError(SatDNError):
    """A point set passed to a metric is empty."""
    pass


class EmptyDatasetError(SatDNError):
    """No image in the dataset can supply training rays."""
    pass


class RpcFitFailedError(SatDNError):
    """A synthetic RPC fit exceeded the residual threshold."""
    pass
