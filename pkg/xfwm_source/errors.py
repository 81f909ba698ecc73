# errors.py
"""Exception types raised by the photon-source modules.

The CLI maps ConfigError to exit status 2 and every other PhotonSourceError
to exit status 3.
"""


class PhotonSourceError(Exception):
    """Base class for failures of a modeling or analysis step."""

    kind = "computation"


class ConfigError(PhotonSourceError, ValueError):
    kind = "config"

    def __init__(self, message, flag=None):
        super().__init__(message)
        self.flag = flag


class DomainError(PhotonSourceError, ValueError):
    """Wavelength or frequency outside the dispersion model window."""

    kind = "domain"


class ModeCutoffError(PhotonSourceError):
    kind = "mode-cutoff"


class InsufficientFringesError(PhotonSourceError):
    kind = "insufficient-fringes"


class DegenerateGradientError(PhotonSourceError):
    kind = "degenerate-gradient"


class GridError(PhotonSourceError, ValueError):
    kind = "grid"


class DegenerateInputError(PhotonSourceError, ValueError):
    kind = "degenerate-input"


class UndefinedEstimatorError(PhotonSourceError, ValueError):
    """An estimator denominator (singles, herald coincidences) is zero."""

    kind = "undefined-estimator"


class DataError(PhotonSourceError, ValueError):
    kind = "data"


class CalibrationError(DataError):
    kind = "calibration"

    def __init__(self, message, setpoints=()):
        super().__init__(message)
        self.setpoints = list(setpoints)


class IncompatibleScansError(DataError):
    kind = "incompatible-scans"


class MeshMismatchError(DataError):
    kind = "mesh-mismatch"
